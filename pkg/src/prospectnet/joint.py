"""Joint learning block: probability-weighted cross-attention between two agents.

Each agent's latent is refined by attending over the other agent's candidate
trajectories (aligned into its own frame and embedded by a GRU) together with
its own context tokens.  Every candidate token carries the other agent's mode
probability as a key bias, context tokens carry a uniform value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import DimensionError, Tensor
from .config import ConfigError
from .marginal import (POS_SCALE, AgentInputs, AgentLatent, CandidateSet, ContextEncoding,
                       candidates_from_latent, encode_context)
from .nn import ParameterStore, add_gru, add_linear, gru_sequence, linear
from .scene import Frame, relative_transform


def add_joint_params(store: ParameterStore, cfg) -> None:
    E = cfg.embed_dim
    add_gru(store, "joint.gru", 2, cfg.gru_hidden)
    add_linear(store, "joint.cand_proj", cfg.gru_hidden, E)
    for name in ("Wq", "Wk", "Wv"):
        store.add(f"joint.{name}", (E, E))
    # zero output projection: an untrained block leaves the latent unchanged
    store.add("joint.Wo", (E, E), init="zeros")


@dataclass
class BiasKey:
    """Per-token bias values; row i of the key-bias matrix is ``values[i]`` repeated."""

    values: Tensor  # (n_tokens,)
    n_candidates: int

    def __len__(self) -> int:
        return self.values.shape[0]

    def matrix(self, width: int) -> Tensor:
        return ag.repeat_cols(self.values, width)


def weighted_attention(queries: Tensor, keys: Tensor, values: Tensor, bias_keys,
                       return_weights: bool = False):
    """softmax((Q Kᵀ + Q K_bᵀ) / √d_k) V, scaled before the softmax.

    ``bias_keys`` is a BiasKey or an explicit (n_tokens, d_k) matrix.
    """
    queries, keys, values = ag.as_tensor(queries), ag.as_tensor(keys), ag.as_tensor(values)
    d_k = queries.shape[1]
    kb = bias_keys.matrix(d_k) if isinstance(bias_keys, BiasKey) else ag.as_tensor(bias_keys)
    n = keys.shape[0]
    if values.shape[0] != n or kb.shape[0] != n:
        raise DimensionError(f"token counts differ: keys {n}, values {values.shape[0]}, bias {kb.shape[0]}")
    if keys.shape[1] != d_k or kb.shape[1] != d_k:
        raise DimensionError(f"key width {keys.shape[1]} / bias width {kb.shape[1]} != query width {d_k}")
    logits = ag.add(queries @ keys.T, queries @ kb.T)
    weights = ag.softmax_rows(ag.mul(logits, 1.0 / math.sqrt(d_k)))
    out = weights @ values
    return (out, weights) if return_weights else out


def build_keys_values(candidate_embeddings: Tensor | None, context: ContextEncoding, p_other,
                      include_history_tokens: bool = True) -> tuple[Tensor, Tensor, BiasKey]:
    """Tokens = candidates, then map rows, then (optionally) history rows; keys and values share them."""
    ctx = [context.map_embedding]
    if include_history_tokens:
        ctx.append(context.agent_embedding)
    width = context.map_embedding.shape[1]
    n_ctx = sum(c.shape[0] for c in ctx)
    p_other = ag.as_tensor(p_other if p_other is not None else np.zeros(0))
    n_cand = 0 if candidate_embeddings is None else candidate_embeddings.shape[0]
    if p_other.shape != (n_cand,):
        raise DimensionError(f"{n_cand} candidate embeddings but probabilities of shape {p_other.shape}")
    if n_cand:
        if candidate_embeddings.shape[1] != width:
            raise DimensionError(f"candidate width {candidate_embeddings.shape[1]} != context width {width}")
        tokens = ag.concat([candidate_embeddings, *ctx], axis=0)
        bias = ag.concat([p_other, Tensor(np.full(n_ctx, 1.0 / n_ctx))], axis=0)
    else:
        tokens = ag.concat(ctx, axis=0) if len(ctx) > 1 else ctx[0]
        bias = Tensor(np.full(n_ctx, 1.0 / n_ctx))
    return tokens, tokens, BiasKey(bias, n_cand)


def align_candidates(trajectories: Tensor, frame_other: Frame, frame_self: Frame) -> Tensor:
    """(N, T, 2) points in the other agent's frame -> same points in this agent's frame."""
    N, T, _ = trajectories.shape
    R, t = relative_transform(frame_other, frame_self)
    flat = trajectories.reshape(N * T, 2)
    return ag.add(flat @ Tensor(R), Tensor(t)).reshape(N, T, 2)


def embed_candidates(trajectories: Tensor, frame_other: Frame, frame_self: Frame,
                     store: ParameterStore, prefix: str = "joint.gru") -> Tensor:
    """Final GRU state for each aligned candidate, fed one waypoint per step: (N, gru_hidden)."""
    trajectories = ag.as_tensor(trajectories)
    N, T, _ = trajectories.shape
    aligned = align_candidates(trajectories, frame_other, frame_self)
    # (N, T, 2) -> (T, N, 2) via a row gather
    order = np.arange(N * T).reshape(N, T).T.ravel()
    steps = ag.take(ag.mul(aligned.reshape(N * T, 2), POS_SCALE), order).reshape(T, N, 2)
    return gru_sequence(steps, store, prefix)


def joint_update(net, latent: AgentLatent, context: ContextEncoding, candidate_embeddings: Tensor,
                 p_other) -> AgentLatent:
    """ĥ = h + WeightedAttention(h W_q, X W_k, X W_v, K_b) W_o."""
    s = net.store
    keys, values, bias = build_keys_values(candidate_embeddings, context, p_other,
                                           net.cfg.include_history_tokens)
    h = latent.h
    att = weighted_attention(h @ s["joint.Wq"], keys @ s["joint.Wk"], values @ s["joint.Wv"], bias)
    return AgentLatent(ag.add(h, att @ s["joint.Wo"]))


@dataclass
class AgentState:
    inputs: AgentInputs
    context: ContextEncoding
    latent: AgentLatent
    candidates: CandidateSet


def agent_state(net, inputs: AgentInputs) -> AgentState:
    ctx, latent = encode_context(net, inputs)
    cands = candidates_from_latent(net, latent, inputs.targets, inputs.frame)
    return AgentState(inputs, ctx, latent, cands)


def _candidate_tokens(net, cands: CandidateSet, frame_other: Frame, frame_self: Frame) -> Tensor:
    g = embed_candidates(cands.trajectories, frame_other, frame_self, net.store)
    return linear(g, net.store, "joint.cand_proj")


def joint_learning_process(net, a: AgentState, b: AgentState, stack_q: int | None = None,
                           trace: list | None = None) -> tuple[AgentLatent, AgentLatent]:
    """Stacked weighted-attention updates of both latents.

    Within one round both updates read the round-entry candidates, so their
    order does not matter.  Between rounds the candidates are re-derived from
    the updated latents.  ``trace`` (if given) collects the executed steps.
    """
    q = net.cfg.stack_q if stack_q is None else stack_q
    if q < 1:
        raise ConfigError("stack_q must be >= 1")
    fa, fb = a.inputs.frame, b.inputs.frame
    h_a, h_b = a.latent, b.latent
    cands_a, cands_b = a.candidates, b.candidates
    for it in range(q):
        tok_b = _candidate_tokens(net, cands_b, fb, fa)
        tok_a = _candidate_tokens(net, cands_a, fa, fb)
        new_a = joint_update(net, h_a, a.context, tok_b, cands_b.probabilities)
        new_b = joint_update(net, h_b, b.context, tok_a, cands_a.probabilities)
        h_a, h_b = new_a, new_b
        if trace is not None:
            trace += [("update", "A", it), ("update", "B", it)]
        if it < q - 1:
            cands_a = candidates_from_latent(net, h_a, a.inputs.targets, fa)
            cands_b = candidates_from_latent(net, h_b, b.inputs.targets, fb)
            if trace is not None:
                trace.append(("repredict", it))
    return h_a, h_b


@dataclass
class JointOutput:
    candidates_a: CandidateSet
    candidates_b: CandidateSet
    latent_a: AgentLatent
    latent_b: AgentLatent
    marginal_a: AgentState
    marginal_b: AgentState
    trace: list = field(default_factory=list)


def joint_predict(net, inputs_a: AgentInputs, inputs_b: AgentInputs) -> JointOutput:
    """Marginal pass for both agents, joint refinement, then N fresh candidates per agent."""
    a, b = agent_state(net, inputs_a), agent_state(net, inputs_b)
    trace: list = []
    h_a, h_b = joint_learning_process(net, a, b, trace=trace)
    ca = candidates_from_latent(net, h_a, inputs_a.targets, inputs_a.frame)
    cb = candidates_from_latent(net, h_b, inputs_b.targets, inputs_b.frame)
    return JointOutput(ca, cb, h_a, h_b, a, b, trace)
