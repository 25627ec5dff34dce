"""Pair-wise multi-modal metrics: minADE, minFDE, miss rate, overlap rate and mAP.

A mode is one predicted pair.  A pair "hits" only when both agents end within
a speed-dependent distance of their ground truth.  All coordinates are world
metres.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import DegenerateShapeError, oriented_iou, rectangle_corners
from .scene import PairPrediction, Scenario

MISS_BASE = 2.0
SLOW_SPEED, FAST_SPEED = 1.4, 11.0
SLOW_SCALE = 0.5
OVERLAP_IOU = 0.0
STANDSTILL = 0.05  # metres between consecutive waypoints below which GT heading is used


@dataclass
class OtherTrack:
    positions: np.ndarray  # (T, 2)
    headings: np.ndarray  # (T,)
    valid: np.ndarray  # (T,) bool
    length: float
    width: float


@dataclass
class EvalRecord:
    pred_a: np.ndarray  # (K, T, 2)
    pred_b: np.ndarray  # (K, T, 2)
    scores: np.ndarray  # (K,)
    gt_a: np.ndarray  # (T, 2)
    gt_b: np.ndarray  # (T, 2)
    speeds: tuple[float, float] = (0.0, 0.0)
    shapes: tuple[tuple[float, float], tuple[float, float]] = ((4.5, 2.0), (4.5, 2.0))
    gt_headings: tuple[np.ndarray, np.ndarray] | None = None
    others: list[OtherTrack] = field(default_factory=list)
    scenario_id: str = ""

    def __post_init__(self):
        self.pred_a = np.asarray(self.pred_a, dtype=np.float64)
        self.pred_b = np.asarray(self.pred_b, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.gt_a = np.asarray(self.gt_a, dtype=np.float64)
        self.gt_b = np.asarray(self.gt_b, dtype=np.float64)
        K = len(self.scores)
        if K < 1:
            raise ValueError("an evaluation record needs at least one pair")
        T = len(self.gt_a)
        if self.gt_b.shape != (T, 2) or self.pred_a.shape != (K, T, 2) or self.pred_b.shape != (K, T, 2):
            raise ValueError(f"inconsistent shapes: preds {self.pred_a.shape}/{self.pred_b.shape}, "
                             f"GT {self.gt_a.shape}/{self.gt_b.shape}, {K} scores")
        if self.gt_headings is None:
            self.gt_headings = (_path_headings(self.gt_a, None), _path_headings(self.gt_b, None))

    @property
    def best_mode(self) -> int:
        """Highest-score mode, lowest index on ties."""
        return int(np.argmax(self.scores))


def _per_mode_ade(rec: EvalRecord) -> np.ndarray:
    ea = np.linalg.norm(rec.pred_a - rec.gt_a, axis=2).mean(axis=1)
    eb = np.linalg.norm(rec.pred_b - rec.gt_b, axis=2).mean(axis=1)
    return 0.5 * (ea + eb)


def _final_errors(rec: EvalRecord) -> tuple[np.ndarray, np.ndarray]:
    return (np.linalg.norm(rec.pred_a[:, -1] - rec.gt_a[-1], axis=1),
            np.linalg.norm(rec.pred_b[:, -1] - rec.gt_b[-1], axis=1))


def min_ade(rec: EvalRecord) -> float:
    return float(_per_mode_ade(rec).min())


def min_fde(rec: EvalRecord) -> float:
    fa, fb = _final_errors(rec)
    return float((0.5 * (fa + fb)).min())


def speed_scale(v: float) -> float:
    if v <= SLOW_SPEED:
        return SLOW_SCALE
    if v >= FAST_SPEED:
        return 1.0
    return SLOW_SCALE + (1.0 - SLOW_SCALE) * (v - SLOW_SPEED) / (FAST_SPEED - SLOW_SPEED)


def miss_threshold(v: float, base: float = MISS_BASE) -> float:
    return base * speed_scale(v)


def mode_hits(rec: EvalRecord, base: float = MISS_BASE) -> np.ndarray:
    fa, fb = _final_errors(rec)
    return (fa <= miss_threshold(rec.speeds[0], base)) & (fb <= miss_threshold(rec.speeds[1], base))


def miss_rate(records: Sequence[EvalRecord], base: float = MISS_BASE) -> float:
    if not records:
        raise ValueError("miss rate of no records")
    return float(np.mean([not mode_hits(r, base).any() for r in records]))


def _path_headings(path: np.ndarray, fallback) -> np.ndarray:
    """Heading at each waypoint from the step into it (first step: the step out of it)."""
    d = np.diff(path, axis=0)
    step = np.concatenate([d[:1], d], axis=0) if len(d) else np.zeros((1, 2))
    heading = np.arctan2(step[:, 1], step[:, 0])
    if fallback is not None:
        still = np.linalg.norm(step, axis=1) < STANDSTILL
        heading = np.where(still, fallback, heading)
    return heading


def _record_overlaps(rec: EvalRecord, iou_threshold: float) -> bool:
    k = rec.best_mode
    preds = (rec.pred_a[k], rec.pred_b[k])
    gts = (rec.gt_a, rec.gt_b)
    T = len(rec.gt_a)
    for idx in (0, 1):
        path = preds[idx]
        heading = _path_headings(path, rec.gt_headings[idx])
        length, width = rec.shapes[idx]
        # every other track's GT, including the partner agent
        partner = 1 - idx
        others = [OtherTrack(gts[partner], rec.gt_headings[partner], np.ones(T, dtype=bool),
                             *rec.shapes[partner])] + list(rec.others)
        for t in range(T):
            box = rectangle_corners(path[t], heading[t], length, width)
            for o in others:
                if not o.valid[t]:
                    continue
                if oriented_iou(box, rectangle_corners(o.positions[t], o.headings[t], o.length, o.width)) > iou_threshold:
                    return True
    return False


def overlap_rate(records: Sequence[EvalRecord], iou_threshold: float = OVERLAP_IOU) -> float:
    if not records:
        raise ValueError("overlap rate of no records")
    return float(np.mean([_record_overlaps(r, iou_threshold) for r in records]))


def average_precision_11(confidences, positives, n_ground_truth: int) -> float:
    """11-point interpolated AP; detections with equal confidence enter together."""
    conf = np.asarray(confidences, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    if n_ground_truth <= 0:
        return 0.0
    precisions, recalls = [], []
    for thr in np.unique(conf)[::-1]:
        sel = conf >= thr
        tp = int(pos[sel].sum())
        precisions.append(tp / int(sel.sum()))
        recalls.append(tp / n_ground_truth)
    precisions, recalls = np.array(precisions), np.array(recalls)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 11):
        ok = recalls >= r - 1e-12
        ap += precisions[ok].max() if ok.any() else 0.0
    return float(ap / 11.0)


def map_metric(records: Sequence[EvalRecord], base: float = MISS_BASE) -> float:
    """One detection per record (its top pair); true positive iff that pair hits."""
    if not records:
        raise ValueError("mAP of no records")
    conf = [r.scores[r.best_mode] for r in records]
    tp = [bool(mode_hits(r, base)[r.best_mode]) for r in records]
    return average_precision_11(conf, tp, len(records))


def evaluate(records: Sequence[EvalRecord], base: float = MISS_BASE,
             iou_threshold: float = OVERLAP_IOU) -> dict:
    return {
        "minADE": float(np.mean([min_ade(r) for r in records])),
        "minFDE": float(np.mean([min_fde(r) for r in records])),
        "MissRate": miss_rate(records, base),
        "OverlapRate": overlap_rate(records, iou_threshold),
        "mAP": map_metric(records, base),
        "n": len(records),
    }


def record_from_scenario(scenario: Scenario, agents: Sequence[str], pairs: Sequence[PairPrediction]) -> EvalRecord:
    """Build an evaluation record from a scenario with ground truth and world-frame pair predictions."""
    if not scenario.has_future:
        raise ValueError(f"scenario {scenario.id} has no ground-truth future")
    if not pairs:
        raise ValueError(f"scenario {scenario.id}: no pair predictions")
    a, b = agents
    h = scenario.history_len
    ta, tb = scenario.track(a), scenario.track(b)
    others = [OtherTrack(tr.positions[h:], tr.headings[h:], tr.valid[h:], tr.length, tr.width)
              for tr in scenario.tracks if tr.agent_id not in (a, b)]
    for tr in (ta, tb):
        if tr.length <= 0 or tr.width <= 0:
            raise DegenerateShapeError(f"agent {tr.agent_id} has a zero-area footprint")
    return EvalRecord(
        pred_a=np.stack([p.traj_a for p in pairs]), pred_b=np.stack([p.traj_b for p in pairs]),
        scores=np.array([p.score for p in pairs]),
        gt_a=scenario.future(a), gt_b=scenario.future(b),
        speeds=(scenario.current_speed(a), scenario.current_speed(b)),
        shapes=((ta.length, ta.width), (tb.length, tb.width)),
        gt_headings=(ta.headings[h:], tb.headings[h:]),
        others=others, scenario_id=scenario.id,
    )
