"""SVG rendering of a scenario with its pair predictions."""
from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon  # noqa: E402

from .geometry import rectangle_corners  # noqa: E402
from .scene import PairPrediction, Scenario  # noqa: E402

AGENT_COLORS = ("#2ca02c", "#8a2be2")  # green, violet
OTHER_COLOR = "#d4a017"  # gold
MAP_COLOR = "#b0b0b0"


def _heading_at_end(path: np.ndarray) -> float:
    d = path[-1] - path[-2] if len(path) > 1 else np.zeros(2)
    return float(np.arctan2(d[1], d[0])) if np.linalg.norm(d) > 1e-6 else 0.0


def _box(ax, center, heading, length, width, color, **kw):
    ax.add_patch(Polygon(rectangle_corners(center, heading, length, width), closed=True,
                         fill=False, edgecolor=color, **kw))


def plot_pair(scenario: Scenario, agents: Sequence[str], pairs: Sequence[PairPrediction], path,
              title: str | None = None, best_mode: int | None = None) -> None:
    """Dashed ground truth, solid predictions, star and box at the best mode's endpoints."""
    fig, ax = plt.subplots(figsize=(7, 7))
    for poly in scenario.map:
        style = "-" if poly.kind == "lane_centerline" else ":"
        ax.plot(poly.points[:, 0], poly.points[:, 1], style, color=MAP_COLOR, lw=0.8, zorder=1)
    t = scenario.current_index
    h = scenario.history_len
    for tr in scenario.tracks:
        if tr.agent_id in agents or not tr.valid[t]:
            continue
        _box(ax, tr.positions[t], tr.headings[t], tr.length, tr.width, OTHER_COLOR, lw=1.2, zorder=2)
        if scenario.has_future:
            fut = tr.positions[h:][tr.valid[h:]]
            ax.plot(fut[:, 0], fut[:, 1], "--", color=OTHER_COLOR, lw=1, zorder=2)
    if best_mode is None and pairs:
        best_mode = int(np.argmax([p.score for p in pairs]))
    for idx, (aid, color) in enumerate(zip(agents, AGENT_COLORS)):
        tr = scenario.track(aid)
        ax.plot(tr.positions[:h, 0], tr.positions[:h, 1], "-", color=color, lw=2.5, alpha=0.5, zorder=3)
        _box(ax, tr.positions[t], tr.headings[t], tr.length, tr.width, color, lw=1.5, zorder=4)
        if scenario.has_future:
            gt = scenario.future(aid)
            ax.plot(gt[:, 0], gt[:, 1], "--", color=color, lw=1.8, zorder=4,
                    label=f"agent {aid} ground truth")
        for k, p in enumerate(pairs):
            traj = p.traj_a if idx == 0 else p.traj_b
            ax.plot(traj[:, 0], traj[:, 1], "-", color=color, lw=1.2,
                    alpha=0.35 + 0.65 * (k == best_mode), zorder=5)
        if pairs:
            traj = pairs[best_mode].traj_a if idx == 0 else pairs[best_mode].traj_b
            ax.plot(*traj[-1], marker="*", markersize=14, color=color, zorder=6)
            _box(ax, traj[-1], _heading_at_end(traj), tr.length, tr.width, color, lw=1.5, zorder=6)
    ax.set_aspect("equal")
    ax.set_title(title or scenario.id)
    ax.legend(loc="best", fontsize=8)
    pts = np.concatenate([scenario.track(a).positions for a in agents]
                         + [p.traj_a for p in pairs] + [p.traj_b for p in pairs], axis=0)
    lo, hi = pts.min(axis=0) - 10, pts.max(axis=0) + 10
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
