"""Pair scoring, ground-truth pair distribution and duplicate-rejecting pair selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ContractError, DimensionError, Tensor
from .config import ConfigError
from .marginal import POS_SCALE
from .nn import ParameterStore, add_mlp2, mlp2

LOG_EPS = 1e-12
NMS_FLOOR = 0.01


def add_scorer_params(store: ParameterStore, cfg) -> None:
    per_agent = 2 * cfg.horizon + cfg.embed_dim
    add_mlp2(store, "scorer", 2 * per_agent, cfg.hidden, 1)


def broadcast_pairs(n_a, n_b=None) -> np.ndarray:
    """Row-major (i, j) pair index, shape (n_a * n_b, 2).  Accepts sizes or sized objects."""
    n_a = n_a if isinstance(n_a, (int, np.integer)) else len(n_a)
    if n_b is None:
        n_b = n_a
    n_b = n_b if isinstance(n_b, (int, np.integer)) else len(n_b)
    if n_a < 1 or n_b < 1:
        raise ContractError("both candidate sets must be non-empty")
    i, j = np.meshgrid(np.arange(n_a), np.arange(n_b), indexing="ij")
    return np.stack([i.ravel(), j.ravel()], axis=1)


def pair_logits(net, traj_a, latent_a, traj_b, latent_b) -> Tensor:
    traj_a, traj_b = ag.as_tensor(traj_a), ag.as_tensor(traj_b)
    h_a, h_b = ag.as_tensor(latent_a), ag.as_tensor(latent_b)
    if h_a.shape[1] != h_b.shape[1]:
        raise DimensionError(f"latent widths {h_a.shape[1]} and {h_b.shape[1]} differ")
    if traj_a.shape[1:] != traj_b.shape[1:]:
        raise DimensionError(f"trajectory shapes {traj_a.shape} and {traj_b.shape} differ")
    na, nb = traj_a.shape[0], traj_b.shape[0]
    idx = broadcast_pairs(na, nb)

    def rows(traj, h, n):
        flat = ag.mul(traj.reshape(n, traj.shape[1] * 2), POS_SCALE)
        return ag.concat([flat, ag.repeat_rows(ag.mean(h, axis=0), n)], axis=1)

    x = ag.concat([ag.take(rows(traj_a, h_a, na), idx[:, 0]),
                   ag.take(rows(traj_b, h_b, nb), idx[:, 1])], axis=1)
    return mlp2(x, net.store, "scorer").reshape(len(idx))


def score_pairs(net, traj_a, latent_a, traj_b, latent_b) -> Tensor:
    """Softmax over all N_a·N_b pairs (row-major) of the scorer MLP's logits.

    ``traj_b`` must already be expressed in the same frame as ``traj_a``;
    latents are (tokens, E) matrices and are mean-pooled.
    """
    return ag.softmax_rows(pair_logits(net, traj_a, latent_a, traj_b, latent_b))


def pair_linf(traj, gt, valid=None) -> float:
    """Largest absolute coordinate error over (valid) timesteps."""
    traj, gt = np.asarray(traj, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if traj.shape != gt.shape:
        raise ContractError(f"prediction {traj.shape} and ground truth {gt.shape} differ in shape")
    err = np.abs(traj - gt)
    if valid is not None:
        err = err[np.asarray(valid, dtype=bool)]
    return float(err.max()) if err.size else 0.0


def avg_pair_linf(traj_a, traj_b, gt_a, gt_b, valid_a=None, valid_b=None) -> float:
    return 0.5 * (pair_linf(traj_a, gt_a, valid_a) + pair_linf(traj_b, gt_b, valid_b))


def pair_distances(S_a, S_b, gt_a, gt_b, valid_a=None, valid_b=None) -> np.ndarray:
    """Averaged l∞ distance of every row-major pair to the ground-truth pair."""
    da = np.array([pair_linf(s, gt_a, valid_a) for s in np.asarray(S_a)])
    db = np.array([pair_linf(s, gt_b, valid_b) for s in np.asarray(S_b)])
    return 0.5 * (da[:, None] + db[None, :]).ravel()


def gt_pair_distribution(d, alpha: float) -> np.ndarray:
    """D_i = exp(-d_i / 2α) / Σ_j exp(-d_j / 2α)."""
    if not alpha > 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    z = -np.asarray(d, dtype=np.float64).ravel() / (2.0 * alpha)
    e = np.exp(z - z.max())
    return e / e.sum()


def scoring_loss(scores, D) -> Tensor:
    """Cross-entropy -Σ D_i ln(s_i + 1e-12)."""
    scores = ag.as_tensor(scores)
    D = np.asarray(D, dtype=np.float64)
    if scores.shape != D.shape:
        raise DimensionError(f"scores {scores.shape} vs target {D.shape}")
    return -ag.sum_(ag.mul(ag.log(ag.add(scores, LOG_EPS)), Tensor(D)))


# ---------------------------------------------------------------- selection

@dataclass
class Selection:
    indices: np.ndarray  # selected pair indices, score-descending
    thresholds: np.ndarray  # separation threshold in force when each was accepted (0 = filled by score)


def endpoint_pair_distance(end_a: np.ndarray, end_b: np.ndarray, i: int, j: int) -> float:
    return max(float(np.linalg.norm(end_a[i] - end_a[j])), float(np.linalg.norm(end_b[i] - end_b[j])))


def select_topk_pairs(traj_a, traj_b, scores, k: int, eps0: float = 2.0, gamma: float = 0.5,
                      floor: float = NMS_FLOOR) -> Selection:
    """Greedy score-ordered selection with threshold decay.

    ``traj_a[p]`` and ``traj_b[p]`` are the two trajectories of pair ``p``.
    Pair distance is the larger of the two agents' endpoint separations.  A
    pass accepts a pair iff it is at least ε from every accepted pair; after
    a short pass ε shrinks by ``gamma``; once ε < ``floor`` the remaining
    slots are filled by score.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = len(scores)
    if not 1 <= k <= n:
        raise ContractError(f"cannot select {k} of {n} pairs")
    if eps0 <= 0 or not 0 < gamma < 1:
        raise ConfigError("need eps0 > 0 and 0 < gamma < 1")
    end_a = np.asarray(traj_a, dtype=np.float64)[:, -1, :]
    end_b = np.asarray(traj_b, dtype=np.float64)[:, -1, :]
    order = np.lexsort((np.arange(n), -scores))
    accepted: list[int] = []
    eps_at: list[float] = []
    taken = np.zeros(n, dtype=bool)
    eps = float(eps0)
    while len(accepted) < k:
        if eps < floor:
            for p in order:
                if len(accepted) == k:
                    break
                if not taken[p]:
                    accepted.append(int(p))
                    eps_at.append(0.0)
                    taken[p] = True
            break
        for p in order:
            if taken[p]:
                continue
            if all(endpoint_pair_distance(end_a, end_b, p, q) >= eps for q in accepted):
                accepted.append(int(p))
                eps_at.append(eps)
                taken[p] = True
                if len(accepted) == k:
                    break
        eps *= gamma
    acc = np.array(accepted)
    thr = np.array(eps_at)
    resort = np.lexsort((acc, -scores[acc]))
    return Selection(acc[resort], thr[resort])
