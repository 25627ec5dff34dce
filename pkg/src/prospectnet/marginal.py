"""Target-driven marginal predictor.

A small vectorized encoder turns map polylines and the agent's own history
into context tokens, a goal head scores sampled targets, and a regression
head maps each chosen goal to a full trajectory.  All coordinates are in the
agent frame (origin at the last observed position, +x along its heading).

Functions take ``net``: any object with ``.store`` (a ParameterStore) and
``.cfg`` (a ModelConfig).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ContractError, Tensor
from .features import TargetSet, preset, scenario_targets
from .nn import ParameterStore, add_mlp2, cross_entropy, mlp2
from .scene import DT, POLYLINE_KINDS, Frame, PairPrediction, Scenario, to_frame, wrap_angle

POS_SCALE = 0.1  # metres -> network units
# fixed sinusoidal encoding of goal positions: 8 directions x 3 wavelengths (metres)
GOAL_WAVELENGTHS = (64.0, 16.0, 4.0)
_GOAL_DIRS = np.stack([np.cos(np.arange(8) * np.pi / 8), np.sin(np.arange(8) * np.pi / 8)])
GOAL_FREQS = np.concatenate([_GOAL_DIRS * (2 * np.pi / w) for w in GOAL_WAVELENGTHS], axis=1)
GOAL_FEATURES = 2 + 2 * GOAL_FREQS.shape[1]
VEL_SCALE = 0.1  # m/s -> network units
POLY_SPACING = 4.0
POLY_FEATURES = 4 + len(POLYLINE_KINDS)


def history_feature_dim(use_heading: bool) -> int:
    return 7 if use_heading else 5


def add_marginal_params(store: ParameterStore, cfg) -> None:
    E, H = cfg.embed_dim, cfg.hidden
    add_mlp2(store, "enc.poly", POLY_FEATURES, H, E)
    add_mlp2(store, "enc.hist", history_feature_dim(cfg.use_heading), H, E)
    for name in ("Wq", "Wk", "Wv"):
        store.add(f"enc.attn.{name}", (E, E))
    add_mlp2(store, "goal", GOAL_FEATURES + E, H, 1)
    add_mlp2(store, "traj", 2 + E, H, 2 * cfg.horizon)


# ---------------------------------------------------------------- inputs

@dataclass
class AgentInputs:
    """Everything the network needs about one agent, precomputed in its frame."""

    agent_id: str
    frame: Frame
    poly_feats: np.ndarray  # (P, POLY_FEATURES)
    poly_segments: np.ndarray  # (P,) polyline index of each row
    n_polylines: int
    hist_feats: np.ndarray  # (T_hist, F)
    targets: TargetSet
    gt_future: np.ndarray | None = None  # (T, 2) agent frame
    gt_valid: np.ndarray | None = None
    positive: int | None = None  # index of the target closest to the GT endpoint
    warning: str | None = None


def _resample(points: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(2, int(math.ceil(cum[-1] / spacing)) + 1)
    s = np.linspace(0.0, cum[-1], n)
    return np.stack([np.interp(s, cum, points[:, 0]), np.interp(s, cum, points[:, 1])], axis=1)


def polyline_features(scenario: Scenario, frame: Frame, radius: float):
    feats, segs = [], []
    k = 0
    for poly in scenario.map:
        pts = to_frame(_resample(poly.points, POLY_SPACING), frame)
        mid = 0.5 * (pts[:-1] + pts[1:])
        near = np.linalg.norm(mid, axis=1) <= radius
        if not np.any(near):
            continue
        onehot = np.zeros(len(POLYLINE_KINDS))
        onehot[POLYLINE_KINDS.index(poly.kind)] = 1.0
        rows = np.concatenate([pts[:-1][near] * POS_SCALE, pts[1:][near] * POS_SCALE,
                               np.tile(onehot, (int(near.sum()), 1))], axis=1)
        feats.append(rows)
        segs.append(np.full(len(rows), k))
        k += 1
    if not feats:
        return np.zeros((0, POLY_FEATURES)), np.zeros(0, dtype=np.int64), 0
    return np.concatenate(feats), np.concatenate(segs).astype(np.int64), k


def history_features(scenario: Scenario, agent_id: str, frame: Frame, use_heading: bool) -> np.ndarray:
    tr = scenario.track(agent_id)
    h = scenario.history_len
    pos = to_frame(tr.positions[:h], frame)
    valid = tr.valid[:h].astype(np.float64)
    vel = np.zeros_like(pos)
    vel[1:] = (pos[1:] - pos[:-1]) / DT
    both = valid[1:] * valid[:-1]
    vel[1:] *= both[:, None]
    vel[0] = vel[1] if h > 1 else 0.0
    cols = [pos * POS_SCALE, vel * VEL_SCALE]
    if use_heading:
        rel = wrap_angle(tr.headings[:h] - frame.heading)
        cols.append(np.stack([np.cos(rel), np.sin(rel)], axis=1))
    cols.append(valid[:, None])
    return np.concatenate(cols, axis=1) * valid[:, None]


def prepare_agent(scenario: Scenario, agent_id: str, cfg, targets: TargetSet | None = None) -> AgentInputs:
    frame = scenario.agent_frame(agent_id)
    feats, segs, n_poly = polyline_features(scenario, frame, cfg.encode_radius)
    hist = history_features(scenario, agent_id, frame, cfg.use_heading)
    if targets is None:
        targets = scenario_targets(scenario, agent_id, preset(cfg.preset))
    inp = AgentInputs(agent_id, frame, feats, segs, n_poly, hist, targets)
    if scenario.has_future:
        inp.gt_future = to_frame(scenario.future(agent_id), frame)
        inp.gt_valid = scenario.future_valid(agent_id).copy()
        if len(targets):
            last = np.flatnonzero(inp.gt_valid)
            end = inp.gt_future[last[-1]] if len(last) else inp.gt_future[-1]
            inp.positive = int(np.argmin(np.linalg.norm(targets.points - end, axis=1)))
    return inp


# ---------------------------------------------------------------- network pieces

@dataclass
class ContextEncoding:
    map_embedding: Tensor  # (H, E)
    agent_embedding: Tensor  # (T_hist, E)
    warning: str | None = None

    @property
    def n_map(self) -> int:
        return self.map_embedding.shape[0]


@dataclass
class AgentLatent:
    h: Tensor  # (T_hist, E)

    def pooled(self) -> Tensor:
        return ag.mean(self.h, axis=0)


@dataclass
class CandidateSet:
    trajectories: Tensor  # (N, T, 2) agent frame
    probabilities: Tensor  # (N,)
    goal_index: np.ndarray  # indices into the target set
    frame: Frame | None = None
    warning: str | None = None

    def __len__(self) -> int:
        return self.trajectories.shape[0]

    @property
    def S(self) -> np.ndarray:
        return self.trajectories.data

    @property
    def p(self) -> np.ndarray:
        return self.probabilities.data

    def top(self, k: int) -> "CandidateSet":
        """The first ``k`` candidates with probabilities renormalized."""
        k = min(k, len(self))
        p = self.probabilities[:k]
        return CandidateSet(self.trajectories[:k], ag.div(p, ag.sum_(p)), self.goal_index[:k],
                            self.frame, self.warning)


def encode_context(net, inputs: AgentInputs) -> tuple[ContextEncoding, AgentLatent]:
    """Map polylines -> m (one max-pooled row each), history -> c, one attention round -> h."""
    store, E = net.store, net.cfg.embed_dim
    warning = None
    if inputs.n_polylines == 0:
        m = Tensor(np.zeros((1, E)))
        warning = "no map polylines within encode radius"
    else:
        pts = mlp2(Tensor(inputs.poly_feats), store, "enc.poly")
        m = ag.segment_max(pts, inputs.poly_segments, inputs.n_polylines)
    c = mlp2(Tensor(inputs.hist_feats), store, "enc.hist")
    tokens = ag.concat([m, c], axis=0)
    q = c @ store["enc.attn.Wq"]
    k = tokens @ store["enc.attn.Wk"]
    v = tokens @ store["enc.attn.Wv"]
    att = ag.softmax_rows(ag.mul(q @ k.T, 1.0 / math.sqrt(E)))
    h = ag.add(c, att @ v)
    return ContextEncoding(m, c, warning), AgentLatent(h)


def goal_features(points: np.ndarray) -> np.ndarray:
    """Scaled coordinates plus a fixed multi-scale sinusoidal encoding."""
    phase = points @ GOAL_FREQS
    return np.concatenate([points * POS_SCALE, np.sin(phase), np.cos(phase)], axis=1)


def goal_logits(net, latent: AgentLatent, targets: TargetSet) -> Tensor:
    if len(targets) == 0:
        raise ContractError("goal prediction needs at least one target")
    pooled = latent.pooled()
    x = ag.concat([Tensor(goal_features(targets.points)), ag.repeat_rows(pooled, len(targets))], axis=1)
    return mlp2(x, net.store, "goal").reshape(len(targets))


def predict_goals(net, latent: AgentLatent, targets: TargetSet) -> Tensor:
    """Probability of each target being the endpoint."""
    return ag.softmax_rows(goal_logits(net, latent, targets))


def regress_trajectory(net, latent: AgentLatent, goals) -> Tensor:
    """(n, 2) goals -> (n, T, 2) trajectories; a single (2,) goal gives (T, 2)."""
    g = np.asarray(goals, dtype=np.float64)
    single = g.ndim == 1
    g = g.reshape(-1, 2)
    pooled = latent.pooled()
    x = ag.concat([Tensor(g * POS_SCALE), ag.repeat_rows(pooled, len(g))], axis=1)
    out = mlp2(x, net.store, "traj")
    T = net.cfg.horizon
    traj = ag.mul(out.reshape(len(g), T, 2), 1.0 / POS_SCALE)
    return traj.reshape(T, 2) if single else traj


def top_indices(p: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` largest entries, ties broken by lower index."""
    return np.argsort(-p, kind="stable")[:n]


def candidates_from_latent(net, latent: AgentLatent, targets: TargetSet, frame: Frame | None = None,
                           n: int | None = None) -> CandidateSet:
    n = n or net.cfg.n_candidates
    probs = predict_goals(net, latent, targets)
    warning = None
    if len(targets) < n:
        warning = f"only {len(targets)} targets for {n} candidates"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    idx = top_indices(probs.data, n)
    p_sel = probs[idx]
    p = ag.div(p_sel, ag.sum_(p_sel))
    S = regress_trajectory(net, latent, targets.points[idx])
    return CandidateSet(S, p, idx, frame, warning)


def marginal_predict(net, inputs: AgentInputs) -> tuple[CandidateSet, ContextEncoding, AgentLatent]:
    ctx, latent = encode_context(net, inputs)
    cands = candidates_from_latent(net, latent, inputs.targets, inputs.frame)
    return cands, ctx, latent


def marginal_loss(net, latent: AgentLatent, inputs: AgentInputs) -> Tensor:
    """Goal cross-entropy on the closest target plus Huber loss of the trajectory regressed from it."""
    if inputs.gt_future is None or inputs.positive is None:
        raise ContractError(f"agent {inputs.agent_id}: ground truth or targets missing")
    ce = cross_entropy(goal_logits(net, latent, inputs.targets), inputs.positive)
    traj = regress_trajectory(net, latent, inputs.targets.points[inputs.positive])
    resid = ag.sub(traj, Tensor(inputs.gt_future))
    w = inputs.gt_valid.astype(np.float64)
    per_step = ag.huber(resid, net.cfg.huber_delta).sum(axis=1)
    reg = ag.div(ag.sum_(ag.mul(per_step, Tensor(w))), max(w.sum(), 1.0))
    return ag.add(ce, reg)


# ---------------------------------------------------------------- Cartesian baseline

def cartesian_baseline(set_a: CandidateSet, set_b: CandidateSet, k: int,
                       frame_a: Frame | None = None, frame_b: Frame | None = None,
                       out_frame: Frame | None = None) -> list[PairPrediction]:
    """Top-k pairs by the product of marginal mode probabilities.

    Ties are broken by (i, j) index order.  With frames given, trajectories are
    mapped from each agent's frame into ``out_frame`` (world when ``out_frame``
    is None).
    """
    pa, pb = set_a.p, set_b.p
    joint = np.outer(pa, pb).reshape(-1)
    order = np.argsort(-joint, kind="stable")[:k]
    Sa, Sb = _to_out(set_a.S, frame_a, out_frame), _to_out(set_b.S, frame_b, out_frame)
    nb = len(pb)
    return [PairPrediction(Sa[f // nb], Sb[f % nb], min(1.0, float(joint[f]))) for f in order]


def _to_out(S: np.ndarray, frame: Frame | None, out_frame: Frame | None) -> np.ndarray:
    from .scene import from_frame
    if frame is None:
        return S
    world = from_frame(S, frame)
    return world if out_frame is None else to_frame(world, out_frame)
