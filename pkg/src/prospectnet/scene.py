"""Scenario domain types and agent-centric coordinate frames."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DT = 0.1  # seconds per timestep (10 Hz)
POLYLINE_KINDS = ("lane_centerline", "boundary", "crosswalk")


class ScenarioValidationError(ValueError):
    pass


def wrap_angle(a):
    """Map angles into [-pi, pi)."""
    return (np.asarray(a, dtype=np.float64) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class Frame:
    origin: tuple[float, float]
    heading: float

    def __post_init__(self):
        h = float(wrap_angle(self.heading))
        object.__setattr__(self, "heading", h)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def rotation(self) -> np.ndarray:
        """Matrix R with local = (world - origin) @ R."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, -s], [s, c]])


def to_frame(points, frame: Frame) -> np.ndarray:
    """World coordinates -> frame coordinates (frame heading becomes +x)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(pts.shape[:-1] + (2,)) if pts.ndim > 1 else np.zeros((0, 2))
    return (pts - np.asarray(frame.origin)) @ frame.rotation()


def from_frame(points, frame: Frame) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(pts.shape[:-1] + (2,)) if pts.ndim > 1 else np.zeros((0, 2))
    return pts @ frame.rotation().T + np.asarray(frame.origin)


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AgentTrack:
    agent_id: str
    positions: np.ndarray  # (L, 2)
    headings: np.ndarray  # (L,)
    valid: np.ndarray  # (L,) bool
    length: float
    width: float
    is_predictable: bool = False

    def __post_init__(self):
        object.__setattr__(self, "agent_id", str(self.agent_id))
        pos = _frozen(self.positions).reshape(-1, 2)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "headings", _frozen(self.headings).reshape(-1))
        object.__setattr__(self, "valid", _frozen(self.valid, dtype=bool).reshape(-1))
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "is_predictable", bool(self.is_predictable))
        if not (len(self.positions) == len(self.headings) == len(self.valid)):
            raise ScenarioValidationError(
                f"agent {self.agent_id}: positions/headings/valid lengths "
                f"{len(self.positions)}/{len(self.headings)}/{len(self.valid)} differ")
        if not (self.length > 0 and self.width > 0):
            raise ScenarioValidationError(f"agent {self.agent_id}: non-positive shape")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.headings))):
            raise ScenarioValidationError(f"agent {self.agent_id}: non-finite state")

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (self.agent_id == other.agent_id and self.length == other.length
                and self.width == other.width and self.is_predictable == other.is_predictable
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.headings, other.headings)
                and np.array_equal(self.valid, other.valid))

    __hash__ = None

    def frame_at(self, t: int) -> Frame:
        return Frame(tuple(self.positions[t]), float(self.headings[t]))


@dataclass(frozen=True, eq=False)
class MapPolyline:
    polyline_id: str
    points: np.ndarray
    kind: str = "lane_centerline"

    def __post_init__(self):
        object.__setattr__(self, "polyline_id", str(self.polyline_id))
        pts = _frozen(self.points).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        if self.kind not in POLYLINE_KINDS:
            raise ScenarioValidationError(f"polyline {self.polyline_id}: unknown kind {self.kind!r}")
        if len(pts) < 2:
            raise ScenarioValidationError(f"polyline {self.polyline_id}: fewer than 2 points")
        if np.any(np.all(np.diff(pts, axis=0) == 0, axis=1)):
            raise ScenarioValidationError(f"polyline {self.polyline_id}: repeated consecutive point")

    def __eq__(self, other) -> bool:
        if not isinstance(other, MapPolyline):
            return NotImplemented
        return (self.polyline_id == other.polyline_id and self.kind == other.kind
                and np.array_equal(self.points, other.points))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    tracks: tuple[AgentTrack, ...]
    map: tuple[MapPolyline, ...]
    history_len: int = 10
    horizon: int = 30

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        object.__setattr__(self, "map", tuple(self.map))
        if not self.id:
            raise ScenarioValidationError("scenario id is empty")
        if self.history_len < 1 or self.horizon < 1:
            raise ScenarioValidationError(f"{self.id}: history_len and horizon must be positive")
        lengths = {len(t) for t in self.tracks}
        if len(lengths) > 1:
            raise ScenarioValidationError(f"{self.id}: tracks have different lengths {sorted(lengths)}")
        if lengths and lengths.pop() not in (self.history_len, self.history_len + self.horizon):
            raise ScenarioValidationError(
                f"{self.id}: track length must be history_len or history_len + horizon")
        ids = [t.agent_id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise ScenarioValidationError(f"{self.id}: duplicate agent ids")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.id == other.id and self.history_len == other.history_len
                and self.horizon == other.horizon and self.tracks == other.tracks
                and self.map == other.map)

    __hash__ = None

    @property
    def current_index(self) -> int:
        return self.history_len - 1

    @property
    def has_future(self) -> bool:
        return bool(self.tracks) and len(self.tracks[0]) == self.history_len + self.horizon

    def track(self, agent_id) -> AgentTrack:
        for t in self.tracks:
            if t.agent_id == str(agent_id):
                return t
        raise KeyError(f"agent {agent_id!r} not in scenario {self.id}")

    def predictable_ids(self) -> list[str]:
        return sorted(t.agent_id for t in self.tracks if t.is_predictable)

    def agent_frame(self, agent_id) -> Frame:
        """Origin and heading of the agent at the last history step."""
        return self.track(agent_id).frame_at(self.current_index)

    def future(self, agent_id) -> np.ndarray:
        return np.asarray(self.track(agent_id).positions[self.history_len:])

    def future_valid(self, agent_id) -> np.ndarray:
        return np.asarray(self.track(agent_id).valid[self.history_len:])

    def current_speed(self, agent_id) -> float:
        tr = self.track(agent_id)
        t = self.current_index
        if t == 0 or not (tr.valid[t] and tr.valid[t - 1]):
            return 0.0
        return float(np.linalg.norm(tr.positions[t] - tr.positions[t - 1]) / DT)


@dataclass(eq=False)
class PairPrediction:
    traj_a: np.ndarray
    traj_b: np.ndarray
    score: float

    def __post_init__(self):
        self.traj_a = np.asarray(self.traj_a, dtype=np.float64).reshape(-1, 2)
        self.traj_b = np.asarray(self.traj_b, dtype=np.float64).reshape(-1, 2)
        self.score = float(self.score)
        if len(self.traj_a) != len(self.traj_b):
            raise ScenarioValidationError("pair trajectories differ in length")
        if not 0.0 <= self.score <= 1.0:
            raise ScenarioValidationError(f"pair score {self.score} outside [0, 1]")

    def __eq__(self, other) -> bool:
        if not isinstance(other, PairPrediction):
            return NotImplemented
        return (self.score == other.score and np.array_equal(self.traj_a, other.traj_a)
                and np.array_equal(self.traj_b, other.traj_b))


def transform_trajectories(trajs, src: Frame, dst: Frame) -> np.ndarray:
    """Re-express points given in frame ``src`` in frame ``dst``."""
    return to_frame(from_frame(trajs, src), dst)


def relative_transform(src: Frame, dst: Frame) -> tuple[np.ndarray, np.ndarray]:
    """(R, t) with dst_points = src_points @ R + t."""
    R = src.rotation().T @ dst.rotation()
    t = (np.asarray(src.origin) - np.asarray(dst.origin)) @ dst.rotation()
    return R, t


def segment_distances(point: Sequence[float], pts: np.ndarray) -> np.ndarray:
    """Distance from ``point`` to every segment of the polyline ``pts``."""
    p = np.asarray(point, dtype=np.float64)
    a, b = pts[:-1], pts[1:]
    ab = b - a
    denom = (ab * ab).sum(axis=1)
    u = np.clip(((p - a) * ab).sum(axis=1) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    proj = a + u[:, None] * ab
    return np.linalg.norm(proj - p, axis=1)


def agent_ids(scenario: Scenario) -> list[str]:
    return [t.agent_id for t in scenario.tracks]


__all__ = [
    "DT", "Frame", "AgentTrack", "MapPolyline", "Scenario", "PairPrediction",
    "ScenarioValidationError", "to_frame", "from_frame", "wrap_angle",
    "transform_trajectories", "relative_transform", "segment_distances", "agent_ids",
]
