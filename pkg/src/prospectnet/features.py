"""Interaction-pair mining, lane-based target sampling and best-mode displacement."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .scene import Frame, MapPolyline, Scenario, segment_distances, to_frame

DEFAULT_THRESHOLD = 5.0
LATERAL_OFFSETS = (-2.0, -1.0, 0.0, 1.0, 2.0)
ARCLENGTH_SPACING = 1.0
OBJECT_CLEARANCE = 1.0


class TargetConfigError(ValueError):
    pass


class UndefinedBMDError(ValueError):
    pass


# ---------------------------------------------------------------- pair mining

def pair_min_distance(scenario: Scenario, id_a: str, id_b: str) -> float:
    """Smallest future distance between two tracks over jointly valid steps (inf if none)."""
    ta, tb = scenario.track(id_a), scenario.track(id_b)
    h = scenario.history_len
    both = ta.valid[h:] & tb.valid[h:]
    if not np.any(both):
        return float("inf")
    d = np.linalg.norm(ta.positions[h:][both] - tb.positions[h:][both], axis=1)
    return float(d.min())


def mine_interactive_pairs(scenario: Scenario, threshold: float = DEFAULT_THRESHOLD) -> list[tuple[str, str]]:
    """Predictable agent pairs whose ground-truth futures come closer than ``threshold``."""
    if not scenario.has_future:
        return []
    ids = scenario.predictable_ids()
    return [(a, b) for a, b in itertools.combinations(ids, 2)
            if pair_min_distance(scenario, a, b) < threshold]


# ---------------------------------------------------------------- target sampling

@dataclass(frozen=True)
class TargetParams:
    n_targets: int
    target_range: tuple[float, float, float, float]  # x_min, x_max, y_min, y_max (agent frame)
    lane_radius: float
    object_radius: float

    def __post_init__(self):
        object.__setattr__(self, "target_range", tuple(float(v) for v in self.target_range))
        x0, x1, y0, y1 = self.target_range
        if self.n_targets <= 0:
            raise TargetConfigError("n_targets must be positive")
        if not (x0 < x1 and y0 < y1):
            raise TargetConfigError(f"empty target range {self.target_range}")
        if not (self.lane_radius > 0 and self.object_radius > 0):
            raise TargetConfigError("radii must be positive")


# Target-generation parameter sets #1-#14 from the original parametric study.
PRESETS: dict[int, TargetParams] = {
    1: TargetParams(8000, (-100.0, 50.0, -80.0, 80.0), 80, 60),
    2: TargetParams(8000, (-150.0, 100.0, -100.0, 100.0), 160, 120),
    3: TargetParams(8000, (-200.0, 100.0, -150.0, 150.0), 160, 120),
    4: TargetParams(10000, (-200.0, 100.0, -150.0, 150.0), 160, 120),
    5: TargetParams(6000, (-150.0, 100.0, -100.0, 100.0), 120, 100),
    6: TargetParams(8000, (-300.0, 200.0, -200.0, 200.0), 200, 200),
    7: TargetParams(6000, (-200.0, 100.0, -150.0, 150.0), 100, 100),
    8: TargetParams(6000, (-200.0, 100.0, -150.0, 150.0), 160, 120),
    9: TargetParams(10000, (-200.0, 100.0, -100.0, 100.0), 160, 120),
    10: TargetParams(12000, (-200.0, 100.0, -150.0, 150.0), 140, 100),
    11: TargetParams(12000, (-200.0, 100.0, -100.0, 100.0), 160, 120),
    12: TargetParams(12000, (-200.0, 100.0, -100.0, 100.0), 200, 200),
    13: TargetParams(16000, (-200.0, 100.0, -100.0, 100.0), 200, 200),
    14: TargetParams(20000, (-200.0, 100.0, -100.0, 100.0), 200, 200),
}
DEFAULT_PRESET = 4


def preset(number: int) -> TargetParams:
    try:
        return PRESETS[int(number)]
    except KeyError:
        raise TargetConfigError(f"unknown target preset #{number}; valid: 1-14") from None


@dataclass
class TargetSet:
    points: np.ndarray  # (M, 2) agent frame
    params: TargetParams
    warning: str | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.points)


def _lane_samples(points: np.ndarray, spacing: float, offsets: Sequence[float]) -> np.ndarray:
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.arange(0.0, cum[-1] + 1e-9, spacing)
    i = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    tangent = seg[i] / seg_len[i, None]
    base = points[i] + (s - cum[i])[:, None] * tangent
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    return np.concatenate([base + o * normal for o in offsets], axis=0)


def sample_targets(polylines: Iterable[MapPolyline], frame: Frame, params: TargetParams,
                   other_positions: np.ndarray | None = None, spacing: float = ARCLENGTH_SPACING,
                   offsets: Sequence[float] = LATERAL_OFFSETS) -> TargetSet:
    """Goal candidates on lane centrelines near ``frame.origin``, in frame coordinates.

    Lanes passing within ``lane_radius`` of the origin are sampled every
    ``spacing`` metres of arclength, each sample widened by ``offsets`` along
    the lane normal.  Points are moved into the frame, clipped to
    ``target_range``, cleared around other agents within ``object_radius``,
    then sorted and thinned evenly down to ``n_targets``.
    """
    lanes = [p for p in polylines if p.kind == "lane_centerline"]
    origin = np.asarray(frame.origin)
    chosen = [p for p in lanes if segment_distances(origin, p.points).min() <= params.lane_radius]
    if not chosen:
        return TargetSet(np.zeros((0, 2)), params, warning="no candidate lanes within lane_radius")
    world = np.concatenate([_lane_samples(p.points, spacing, offsets) for p in chosen], axis=0)
    local = to_frame(world, frame)
    x0, x1, y0, y1 = params.target_range
    keep = (local[:, 0] >= x0) & (local[:, 0] <= x1) & (local[:, 1] >= y0) & (local[:, 1] <= y1)
    if other_positions is not None and len(other_positions):
        others = np.asarray(other_positions, dtype=np.float64).reshape(-1, 2)
        near = others[np.linalg.norm(others - origin, axis=1) <= params.object_radius]
        if len(near):
            near_local = to_frame(near, frame)
            d = np.linalg.norm(local[:, None, :] - near_local[None, :, :], axis=2)
            keep &= np.all(d > OBJECT_CLEARANCE, axis=1)
    local = local[keep]
    if not len(local):
        return TargetSet(local, params, warning="no lane samples inside target_range")
    local = local[np.lexsort((local[:, 1], local[:, 0]))]
    if len(local) > params.n_targets:
        idx = np.unique(np.round(np.linspace(0, len(local) - 1, params.n_targets)).astype(int))
        local = local[idx]
    return TargetSet(local, params)


def scenario_targets(scenario: Scenario, agent_id: str, params: TargetParams) -> TargetSet:
    """Targets for one agent, excluding space around every other agent's current position."""
    t = scenario.current_index
    others = np.array([tr.positions[t] for tr in scenario.tracks
                       if tr.agent_id != agent_id and tr.valid[t]]).reshape(-1, 2)
    return sample_targets(scenario.map, scenario.agent_frame(agent_id), params, others)


# ---------------------------------------------------------------- BMD

def best_mode_displacement(targets: TargetSet, gt_endpoint) -> float:
    if len(targets) == 0:
        raise UndefinedBMDError("best-mode displacement of an empty target set")
    return float(np.min(np.linalg.norm(targets.points - np.asarray(gt_endpoint, dtype=np.float64), axis=1)))


def _stats(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if not len(v):
        return {"mean": float("nan"), "median": float("nan"), "p75": float("nan"), "p90": float("nan"), "n": 0}
    return {
        "mean": float(v.mean()),
        "median": float(np.percentile(v, 50)),
        "p75": float(np.percentile(v, 75)),
        "p90": float(np.percentile(v, 90)),
        "n": int(len(v)),
    }


@dataclass
class BMDReport:
    params: TargetParams
    agent1: dict
    agent2: dict
    skipped: int = 0
    values: tuple[list, list] = field(default_factory=lambda: ([], []))


def bmd_report(scenarios: Sequence[Scenario], params_list: Sequence[TargetParams],
               threshold: float = DEFAULT_THRESHOLD) -> list[BMDReport]:
    """BMD statistics for the first and second agent of each scene's first interactive pair."""
    reports = []
    for params in params_list:
        first, second, skipped = [], [], 0
        for sc in scenarios:
            pairs = mine_interactive_pairs(sc, threshold)
            if not pairs:
                skipped += 1
                continue
            for aid, sink in zip(pairs[0], (first, second)):
                ts = scenario_targets(sc, aid, params)
                end = to_frame(sc.future(aid)[-1:], sc.agent_frame(aid))[0]
                if len(ts) == 0:
                    skipped += 1
                    continue
                sink.append(best_mode_displacement(ts, end))
        reports.append(BMDReport(params, _stats(first), _stats(second), skipped, (first, second)))
    return reports
