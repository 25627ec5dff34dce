"""Full two-agent model: parameters, per-scene losses and inference."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig
from .features import mine_interactive_pairs
from .joint import add_joint_params, agent_state, align_candidates, joint_predict
from .marginal import (AgentInputs, add_marginal_params, cartesian_baseline, encode_context, marginal_loss,
                       prepare_agent)
from .nn import ParameterStore
from .scene import PairPrediction, Scenario, from_frame
from .scoring import (add_scorer_params, gt_pair_distribution, pair_distances, score_pairs,
                      scoring_loss, select_topk_pairs)


class ProspectModel:
    """Parameter store plus configuration; the ``net`` every module function takes."""

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        self.cfg = (cfg or ModelConfig()).validate()
        self.seed = seed
        self.store = ParameterStore(seed)
        add_marginal_params(self.store, self.cfg)
        add_joint_params(self.store, self.cfg)
        add_scorer_params(self.store, self.cfg)


@dataclass
class PairInputs:
    scenario_id: str
    agents: tuple[str, str]
    a: AgentInputs
    b: AgentInputs


def choose_pair(scenario: Scenario, threshold: float = 5.0) -> tuple[str, str]:
    """First mined interactive pair, else the first two predictable agents."""
    mined = mine_interactive_pairs(scenario, threshold) if scenario.has_future else []
    if mined:
        return mined[0]
    ids = scenario.predictable_ids()
    if len(ids) < 2:
        raise ValueError(f"scenario {scenario.id}: fewer than two predictable agents")
    return ids[0], ids[1]


def prepare_pair(scenario: Scenario, cfg: ModelConfig, pair=None) -> PairInputs:
    pair = tuple(pair) if pair is not None else choose_pair(scenario)
    return PairInputs(scenario.id, pair, prepare_agent(scenario, pair[0], cfg),
                      prepare_agent(scenario, pair[1], cfg))


# ---------------------------------------------------------------- losses

def marginal_pair_loss(net, pair: PairInputs) -> Tensor:
    total = None
    for inp in (pair.a, pair.b):
        _, latent = encode_context(net, inp)
        loss = marginal_loss(net, latent, inp)
        total = loss if total is None else ag.add(total, loss)
    return total


def joint_pair_loss(net, pair: PairInputs, target: np.ndarray | None = None) -> Tensor:
    """Marginal-head losses on the refined latents plus pair-scoring cross-entropy.

    The pair target distribution is a constant of the step (no gradient flows
    through it); ``target`` overrides it, e.g. to hold it fixed while probing
    the loss with finite differences.
    """
    out = joint_predict(net, pair.a, pair.b)
    loss = ag.add(marginal_loss(net, out.latent_a, pair.a), marginal_loss(net, out.latent_b, pair.b))
    ca, cb = out.candidates_a, out.candidates_b
    sb_in_a = align_candidates(cb.trajectories, pair.b.frame, pair.a.frame)
    scores = score_pairs(net, ca.trajectories, out.latent_a.h, sb_in_a, out.latent_b.h)
    D = pair_target(net, pair, ca.S, cb.S) if target is None else target
    return ag.add(loss, scoring_loss(scores, D))


def pair_target(net, pair: PairInputs, S_a: np.ndarray, S_b: np.ndarray) -> np.ndarray:
    """Ground-truth pair distribution over the row-major candidate pairs (each agent in its own frame)."""
    d = pair_distances(S_a, S_b, pair.a.gt_future, pair.b.gt_future, pair.a.gt_valid, pair.b.gt_valid)
    return gt_pair_distribution(d, net.cfg.alpha)


def frozen_pair_target(net, pair: PairInputs) -> np.ndarray:
    """The target ``joint_pair_loss`` would use with the current parameters."""
    out = joint_predict(net, pair.a, pair.b)
    return pair_target(net, pair, out.candidates_a.S, out.candidates_b.S)


# ---------------------------------------------------------------- inference

def predict_joint_pairs(net, pair: PairInputs, k: int | None = None) -> list[PairPrediction]:
    """Top-k scored pairs after joint refinement, in world coordinates."""
    k = k or net.cfg.top_k
    out = joint_predict(net, pair.a, pair.b)
    ca, cb = out.candidates_a, out.candidates_b
    sb_in_a = align_candidates(cb.trajectories, pair.b.frame, pair.a.frame)
    scores = score_pairs(net, ca.trajectories, out.latent_a.h, sb_in_a, out.latent_b.h).data
    nb = len(cb)
    Sa = np.repeat(ca.S, nb, axis=0)
    Sb = np.tile(cb.S, (len(ca), 1, 1))
    sel = select_topk_pairs(Sa, Sb, scores, min(k, len(scores)), net.cfg.nms_eps0, net.cfg.nms_gamma)
    return [PairPrediction(from_frame(Sa[p], pair.a.frame), from_frame(Sb[p], pair.b.frame),
                           min(1.0, float(scores[p]))) for p in sel.indices]


def predict_marginal_pairs(net, pair: PairInputs, k: int | None = None) -> list[PairPrediction]:
    """Cartesian-product baseline over each agent's top-k marginal candidates, world coordinates."""
    k = k or net.cfg.top_k
    sa, sb = agent_state(net, pair.a), agent_state(net, pair.b)
    return cartesian_baseline(sa.candidates.top(k), sb.candidates.top(k), k, pair.a.frame, pair.b.frame)
