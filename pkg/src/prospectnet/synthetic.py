"""Synthetic two-vehicle interactive scenarios.

Four scene kinds are built from straight and circular-arc paths with simple
longitudinal kinematics:

* ``follow``: two vehicles in one lane; the leader brakes to a stop and the
  follower stops close behind it.
* ``merge``: as ``follow`` but one vehicle enters from a ramp that joins the
  main lane.
* ``yield_turn``: agent A turns left across the lane of oncoming agent B and
  stops at a yield point until B has cleared the conflict point.
* ``two_left_turns``: both vehicles turn left from opposite approaches; the
  one arriving later yields.

Every generated scene is checked before it is returned: the two predictable
vehicles come within 5 m of each other in the future, no two footprints
overlap at any timestep, and the background vehicle keeps clear.  A candidate
that fails is redrawn from the same random stream, so output is still a pure
function of ``seed``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import rectangle_corners, rectangles_overlap
from .scene import DT, AgentTrack, MapPolyline, Scenario, wrap_angle

KINDS = ("yield_turn", "merge", "follow", "two_left_turns")
INTERACTION_DISTANCE = 5.0
MAX_ATTEMPTS = 500


class SyntheticConfigError(ValueError):
    pass


class _Reject(Exception):
    pass


class Path:
    """Densely sampled planar curve parameterized by arclength."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9])
        self.points = pts[keep]
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        d = np.diff(self.points, axis=0)
        self.seg_heading = np.arctan2(d[:, 1], d[:, 0])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def position(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.s) - 2)
        u = (s - self.s[i])[:, None]
        direction = np.stack([np.cos(self.seg_heading[i]), np.sin(self.seg_heading[i])], axis=1)
        return self.points[i] + u * direction

    def heading(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.s) - 2)
        return self.seg_heading[i]

    def offset(self, lateral: float) -> "Path":
        """Parallel curve shifted ``lateral`` metres to the left."""
        h = np.concatenate([self.seg_heading, self.seg_heading[-1:]])
        h[1:-1] = np.arctan2(np.sin(self.seg_heading[:-1]) + np.sin(self.seg_heading[1:]),
                             np.cos(self.seg_heading[:-1]) + np.cos(self.seg_heading[1:]))
        normal = np.stack([-np.sin(h), np.cos(h)], axis=1)
        return Path(self.points + lateral * normal)

    def project(self, point) -> float:
        """Arclength of the closest point on the path."""
        p = np.asarray(point, dtype=np.float64)
        a, b = self.points[:-1], self.points[1:]
        ab = b - a
        den = (ab * ab).sum(axis=1)
        u = np.clip(((p - a) * ab).sum(axis=1) / den, 0.0, 1.0)
        d = np.linalg.norm(a + u[:, None] * ab - p, axis=1)
        i = int(np.argmin(d))
        return float(self.s[i] + u[i] * math.sqrt(den[i]))


def straight(start, heading: float, length: float, step: float = 2.0) -> np.ndarray:
    n = max(2, int(math.ceil(length / step)) + 1)
    u = np.linspace(0.0, length, n)
    return np.asarray(start, dtype=np.float64) + u[:, None] * np.array([math.cos(heading), math.sin(heading)])


def arc(start, heading: float, radius: float, sweep: float, step: float = 1.0) -> np.ndarray:
    """Circular arc leaving ``start`` along ``heading``; positive sweep turns left."""
    side = 1.0 if sweep > 0 else -1.0
    center = np.asarray(start) + radius * np.array([-math.sin(heading), math.cos(heading)]) * side
    phi0 = heading - side * math.pi / 2
    n = max(3, int(math.ceil(abs(sweep) * radius / step)) + 1)
    phi = phi0 + np.linspace(0.0, sweep, n)
    return center + radius * np.stack([np.cos(phi), np.sin(phi)], axis=1)


def chain(*pieces) -> np.ndarray:
    out = [pieces[0]]
    for p in pieces[1:]:
        out.append(p[1:] if np.allclose(p[0], out[-1][-1]) else p)
    return np.concatenate(out, axis=0)


def _end_heading(pts: np.ndarray) -> float:
    d = pts[-1] - pts[-2]
    return math.atan2(d[1], d[0])


# ---------------------------------------------------------------- kinematics

def _times(history_len: int, horizon: int) -> np.ndarray:
    """Time of every grid step relative to the current (last history) step."""
    return (np.arange(history_len + horizon) - (history_len - 1)) * DT


def _braking_profile(times, s0, v0, t_brake, decel):
    """Constant speed v0, then constant deceleration from t_brake until standstill."""
    s = np.empty_like(times)
    t_stop = t_brake + v0 / decel
    for k, t in enumerate(times):
        if t <= t_brake:
            s[k] = s0 + v0 * t
        else:
            tt = min(t, t_stop) - t_brake
            s[k] = s0 + v0 * t_brake + v0 * tt - 0.5 * decel * tt * tt
    return s, t_stop


def _stop_then_go(times, s0, v0, s_stop, t_go, accel):
    """Brake uniformly to rest at s_stop, wait, then accelerate from t_go."""
    d = s_stop - s0
    if d <= 0.5 or v0 <= 0.1:
        raise _Reject
    decel = v0 * v0 / (2.0 * d)
    t_stop = v0 / decel
    s = np.empty_like(times)
    for k, t in enumerate(times):
        if t <= 0:
            s[k] = s0 + v0 * t
        elif t <= t_stop:
            s[k] = s0 + v0 * t - 0.5 * decel * t * t
        elif t <= t_go:
            s[k] = s_stop
        else:
            s[k] = s_stop + 0.5 * accel * (t - t_go) ** 2
    return s, decel, t_stop


@dataclass
class _Agent:
    path: Path
    s: np.ndarray
    length: float
    width: float

    def positions(self) -> np.ndarray:
        return self.path.position(self.s)

    def headings(self) -> np.ndarray:
        return self.path.heading(self.s)


# ---------------------------------------------------------------- scene kinds

def _vehicle_size(rng):
    return float(rng.uniform(3.9, 4.5)), float(rng.uniform(1.8, 2.0))


def _jitter(rng, value, noise):
    return value * (1.0 + noise * rng.standard_normal()) if noise > 0 else value


def _build_follow(rng, times, speed_noise, ramp: bool):
    main = straight((-120.0, 0.0), 0.0, 200.0)
    lanes = {"main": main, "left": straight((-120.0, 3.5), 0.0, 200.0)}
    if ramp:
        angle = math.radians(rng.uniform(10.0, 16.0))
        ramp_len = 70.0
        start = (-ramp_len * math.cos(angle), -ramp_len * math.sin(angle))
        ramp_pts = chain(straight(start, angle, ramp_len), straight((0.0, 0.0), 0.0, 80.0))
        lanes["ramp"] = ramp_pts
    len_l, wid_l = _vehicle_size(rng)
    len_f, wid_f = _vehicle_size(rng)
    g_stop = 0.5 * (len_l + len_f) + rng.uniform(0.3, 0.45)

    v_l = _jitter(rng, rng.uniform(5.0, 9.0), speed_noise)
    v_f = v_l + rng.uniform(0.0, 2.0)
    gap0 = rng.uniform(7.0, 12.0)
    a_l = rng.uniform(2.5, 4.5)
    t_bl = rng.uniform(0.0, 0.5)

    if ramp:
        ramp_path = Path(lanes["ramp"])
        main_path = Path(main)
        merge_main = main_path.project((0.0, 0.0))
        merge_ramp = ramp_path.project((0.0, 0.0))
        leader_on_ramp = bool(rng.integers(2))
        path_l, off_l = (ramp_path, merge_ramp) if leader_on_ramp else (main_path, merge_main)
        path_f, off_f = (main_path, merge_main) if leader_on_ramp else (ramp_path, merge_ramp)
        u_l0 = rng.uniform(-14.0, -4.0)
    else:
        path_l = path_f = Path(main)
        off_l = off_f = Path(main).project((0.0, 0.0))
        u_l0 = rng.uniform(-10.0, 10.0)
    u_f0 = u_l0 - gap0
    s_l, t_stop_l = _braking_profile(times, u_l0 + off_l, v_l, t_bl, a_l)
    u_l = s_l - off_l
    u_l_stop = u_l0 + v_l * t_bl + v_l * v_l / (2 * a_l)
    t_bf = rng.uniform(0.2, 0.6)
    d_f = (u_l_stop - g_stop) - (u_f0 + v_f * t_bf)
    if d_f <= 1.0:
        raise _Reject
    a_f = v_f * v_f / (2.0 * d_f)
    if not 0.8 <= a_f <= 6.0:
        raise _Reject
    s_f, t_stop_f = _braking_profile(times, u_f0 + off_f, v_f, t_bf, a_f)
    if t_stop_f > times[-1] - 0.1:
        raise _Reject
    u_f = s_f - off_f
    if np.any(u_l - u_f < g_stop - 1e-9):
        raise _Reject
    leader = _Agent(path_l, s_l, len_l, wid_l)
    follower = _Agent(path_f, s_f, len_f, wid_f)
    # agent A is always the follower: it is the one whose future depends on the other
    return [follower, leader], lanes


def _yield_scene(rng, times, path_go: Path, path_y: Path, conflict, speed_noise):
    """``path_y`` vehicle stops before the conflict point until ``path_go`` clears it."""
    s_go_c = path_go.project(conflict)
    s_y_c = path_y.project(conflict)
    v_go = _jitter(rng, rng.uniform(6.0, 10.0), speed_noise)
    t_pass = rng.uniform(0.8, 2.2)
    s_go0 = s_go_c - v_go * t_pass
    s_go = s_go0 + v_go * times

    back = rng.uniform(5.0, 8.0)
    s_stop = s_y_c - back
    v_y = _jitter(rng, rng.uniform(4.0, 7.0), speed_noise)
    t_stop_target = rng.uniform(0.8, max(0.9, t_pass + 0.2))
    d = 0.5 * v_y * t_stop_target
    s_y0 = s_stop - d
    t_clear = t_pass + 6.0 / v_go
    t_go = t_clear + rng.uniform(0.3, 0.8)
    s_y, decel, t_stop = _stop_then_go(times, s_y0, v_y, s_stop, t_go, rng.uniform(1.5, 2.5))
    if not 1.0 <= decel <= 5.0:
        raise _Reject
    len_g, wid_g = _vehicle_size(rng)
    len_y, wid_y = _vehicle_size(rng)
    return _Agent(path_go, s_go, len_g, wid_g), _Agent(path_y, s_y, len_y, wid_y)


def _intersection_lanes():
    """Four-way crossing of two 2-lane roads at the origin, right-hand traffic."""
    L = 70.0
    return {
        "eb": straight((-L, -1.75), 0.0, 2 * L),
        "wb": straight((L, 1.75), math.pi, 2 * L),
        "nb": straight((1.75, -L), math.pi / 2, 2 * L),
        "sb": straight((-1.75, L), -math.pi / 2, 2 * L),
    }


def _left_turn(start, heading, radius, approach_end):
    """Straight approach to ``approach_end`` then a 90 degree left turn and an exit leg."""
    approach = straight(start, heading, float(np.linalg.norm(np.asarray(approach_end) - start)), step=2.0)
    turn = arc(approach[-1], heading, radius, math.pi / 2)
    exit_leg = straight(turn[-1], _end_heading(turn), 60.0)
    return chain(approach, turn, exit_leg)


def _polyline_intersection(p: np.ndarray, q: np.ndarray):
    for i in range(len(p) - 1):
        a, b = p[i], p[i + 1]
        for j in range(len(q) - 1):
            c, d = q[j], q[j + 1]
            r, s = b - a, d - c
            den = r[0] * s[1] - r[1] * s[0]
            if abs(den) < 1e-12:
                continue
            t = ((c[0] - a[0]) * s[1] - (c[1] - a[1]) * s[0]) / den
            u = ((c[0] - a[0]) * r[1] - (c[1] - a[1]) * r[0]) / den
            if 0 <= t <= 1 and 0 <= u <= 1:
                return a + t * r
    return None


def _build_yield_turn(rng, times, speed_noise):
    lanes = _intersection_lanes()
    radius = rng.uniform(7.0, 10.0)
    # westbound A turns left (south) across eastbound B
    turn_x = -1.75 + radius
    turn = _left_turn(np.array([70.0, 1.75]), math.pi, radius, (turn_x, 1.75))
    lanes["wb_left"] = turn
    conflict = _polyline_intersection(turn, lanes["eb"])
    if conflict is None:
        raise _Reject
    go, yielder = _yield_scene(rng, times, Path(lanes["eb"]), Path(turn), conflict, speed_noise)
    return [yielder, go], lanes


def _build_two_left_turns(rng, times, speed_noise):
    """Opposing left turns; the arcs pass each other without crossing near the centre."""
    lanes = _intersection_lanes()
    radius = rng.uniform(8.0, 11.0)
    nb_turn = _left_turn(np.array([1.75, -70.0]), math.pi / 2, radius, (1.75, 1.75 - radius))
    sb_turn = _left_turn(np.array([-1.75, 70.0]), -math.pi / 2, radius, (-1.75, -1.75 + radius))
    lanes["nb_left"] = nb_turn
    lanes["sb_left"] = sb_turn
    paths = [Path(nb_turn), Path(sb_turn)]
    gaps = np.linalg.norm(nb_turn[:, None, :] - sb_turn[None, :, :], axis=2)
    i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
    meet = [paths[0].project(nb_turn[i]), paths[1].project(sb_turn[j])]
    t_first = rng.uniform(0.8, 2.0)
    t_meet = [t_first, t_first + rng.uniform(0.0, 0.6)]
    if rng.integers(2):
        t_meet.reverse()
    agents = []
    for path, s_meet, t_m in zip(paths, meet, t_meet):
        v0 = _jitter(rng, rng.uniform(5.0, 8.0), speed_noise)
        decel = rng.uniform(0.0, 1.5)
        if v0 - decel * t_m < 2.0:
            raise _Reject
        s0 = s_meet - (v0 * t_m - 0.5 * decel * t_m * t_m)
        t_floor = v0 / decel if decel > 0 else np.inf
        tt = np.minimum(np.maximum(times, 0.0), t_floor)
        s = s0 + v0 * np.minimum(times, 0.0) + v0 * tt - 0.5 * decel * tt * tt
        length, width = _vehicle_size(rng)
        agents.append(_Agent(path, s, length, width))
    # the later arrival is agent A
    if t_meet[0] < t_meet[1]:
        agents.reverse()
    return agents, lanes


# ---------------------------------------------------------------- assembly

def _min_future_distance(a: np.ndarray, b: np.ndarray, history_len: int) -> float:
    return float(np.min(np.linalg.norm(a[history_len:] - b[history_len:], axis=1)))


def _any_overlap(boxes_a, boxes_b) -> bool:
    return any(rectangles_overlap(ca, cb) for ca, cb in zip(boxes_a, boxes_b))


def _boxes(pos, head, length, width):
    return [rectangle_corners(p, h, length, width) for p, h in zip(pos, head)]


def generate_synthetic(kind: str, seed: int, history_len: int = 10, horizon: int = 30,
                       speed_noise: float = 0.05, offset_noise: float = 0.15,
                       n_background: int = 1, scenario_id: str | None = None) -> Scenario:
    """Deterministically generate one interactive scene of the given kind."""
    if kind not in KINDS:
        raise SyntheticConfigError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng([KINDS.index(kind), int(seed)])
    times = _times(history_len, horizon)
    for _ in range(MAX_ATTEMPTS):
        try:
            return _attempt(rng, kind, times, history_len, horizon, speed_noise, offset_noise,
                            n_background, scenario_id or f"{kind}-{seed}")
        except _Reject:
            continue
    raise RuntimeError(f"could not build a valid {kind} scene for seed {seed}")


def _attempt(rng, kind, times, history_len, horizon, speed_noise, offset_noise, n_background, sid):
    if kind == "follow":
        agents, lanes = _build_follow(rng, times, speed_noise, ramp=False)
    elif kind == "merge":
        agents, lanes = _build_follow(rng, times, speed_noise, ramp=True)
    elif kind == "yield_turn":
        agents, lanes = _build_yield_turn(rng, times, speed_noise)
    else:
        agents, lanes = _build_two_left_turns(rng, times, speed_noise)

    # lateral wander inside the lane, then a random rigid placement of the scene
    for ag in agents:
        if offset_noise > 0:
            lateral = float(np.clip(offset_noise * rng.standard_normal(), -0.5, 0.5))
            s_on_old = ag.s
            ag.path = ag.path.offset(lateral)
            ag.s = s_on_old
    theta = rng.uniform(-math.pi, math.pi)
    shift = rng.uniform(-50.0, 50.0, size=2)
    rot = np.array([[math.cos(theta), math.sin(theta)], [-math.sin(theta), math.cos(theta)]])

    def place(p):
        return np.asarray(p) @ rot + shift

    positions = [place(ag.positions()) for ag in agents]
    headings = [wrap_angle(ag.headings() + theta) for ag in agents]
    if _min_future_distance(positions[0], positions[1], history_len) >= INTERACTION_DISTANCE:
        raise _Reject
    boxes = [_boxes(p, h, ag.length, ag.width) for p, h, ag in zip(positions, headings, agents)]
    if _any_overlap(boxes[0], boxes[1]):
        raise _Reject

    tracks = []
    for i, (ag, p, h) in enumerate(zip(agents, positions, headings)):
        tracks.append(AgentTrack(agent_id=str(101 + i), positions=p, headings=h,
                                 valid=np.ones(len(p), dtype=bool), length=ag.length,
                                 width=ag.width, is_predictable=True))

    for j in range(n_background):
        tracks.append(_background_vehicle(rng, lanes, positions, boxes, place, theta, len(times), j))

    polylines = [MapPolyline(f"lane_{name}", place(pts), "lane_centerline")
                 for name, pts in sorted(lanes.items())]
    polylines += _boundaries(lanes, place)
    return Scenario(id=sid, tracks=tracks, map=polylines, history_len=history_len, horizon=horizon)


def _boundaries(lanes, place):
    out = []
    for name in sorted(lanes):
        if name not in ("main", "eb", "wb", "nb", "sb"):
            continue
        path = Path(lanes[name])
        edge = path.offset(-1.75 if name != "main" else -1.75).points
        out.append(MapPolyline(f"edge_{name}", place(edge[:: max(1, len(edge) // 40)]), "boundary"))
    return out


def _background_vehicle(rng, lanes, positions, boxes, place, theta, n_steps, j):
    names = sorted(lanes)
    for _ in range(50):
        path = Path(lanes[names[rng.integers(len(names))]])
        s = rng.uniform(0.1, 0.9) * path.length
        side = 1.0 if rng.integers(2) else -1.0
        p_local = path.offset(side * rng.uniform(4.5, 6.0)).position(s)[0]
        h_local = float(path.heading(s)[0])
        p = place(p_local)
        if min(np.min(np.linalg.norm(pp - p, axis=1)) for pp in positions) < 7.0:
            continue
        length, width = _vehicle_size(rng)
        corners = rectangle_corners(p, h_local + theta, length, width)
        if any(rectangles_overlap(corners, b) for bs in boxes for b in bs):
            continue
        return AgentTrack(agent_id=str(901 + j), positions=np.tile(p, (n_steps, 1)),
                          headings=np.full(n_steps, float(wrap_angle(h_local + theta))),
                          valid=np.ones(n_steps, dtype=bool), length=length, width=width,
                          is_predictable=False)
    raise _Reject


def generate_dataset(kind: str, count: int, seed: int, start: int = 0, **kwargs) -> list[Scenario]:
    """``count`` scenes; scene i uses seed ``seed * 100003 + i``.  ``kind='mixed'`` cycles kinds.

    ``start`` skips the first scenes so a dataset can be built in chunks.
    """
    if kind != "mixed" and kind not in KINDS:
        raise SyntheticConfigError(f"unknown scene kind {kind!r}")
    out = []
    for i in range(start, start + count):
        k = KINDS[i % len(KINDS)] if kind == "mixed" else kind
        sid = f"{k}-{seed}-{i:05d}"
        out.append(generate_synthetic(k, seed * 100003 + i, scenario_id=sid, **kwargs))
    return out
