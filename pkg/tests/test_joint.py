import math
from dataclasses import replace

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from prospectnet import autograd as ag
from prospectnet.autograd import DimensionError, Tensor
from prospectnet.config import ConfigError
from prospectnet.gradcheck import check_gradients
from prospectnet.joint import (BiasKey, agent_state, align_candidates, build_keys_values, embed_candidates,
                               joint_learning_process, joint_predict, joint_update, weighted_attention)
from prospectnet.marginal import ContextEncoding, marginal_predict
from prospectnet.model import ProspectModel
from prospectnet.nn import gru_step
from prospectnet.scene import Frame, to_frame, from_frame

vals = st.floats(-3, 3, allow_nan=False)


def _ctx(rng, H=3, T=4, E=6):
    return ContextEncoding(Tensor(rng.normal(size=(H, E))), Tensor(rng.normal(size=(T, E))))


def _live(net, scale=0.5, seed=9):
    """Non-zero output projection so the joint block actually changes latents."""
    E = net.cfg.embed_dim
    net.store["joint.Wo"].data[...] = np.random.default_rng(seed).normal(scale=scale, size=(E, E))
    return net


# ---------------------------------------------------------------- weighted attention

def test_single_token_returns_value_exactly(rng):
    q, k, v = rng.normal(size=(3, 4)), rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    out = weighted_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(rng.normal(size=(1, 4)))).data
    assert np.array_equal(out, np.repeat(v, 3, axis=0))


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, (3, 5), elements=vals), hnp.arrays(np.float64, (4, 5), elements=vals),
       hnp.arrays(np.float64, (4, 5), elements=vals), hnp.arrays(np.float64, 5, elements=vals))
def test_constant_bias_equals_unbiased(q, k, v, c):
    biased, w = weighted_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(np.tile(c, (4, 1))),
                                   return_weights=True)
    plain = weighted_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(np.zeros((4, 5))))
    assert np.allclose(biased.data, plain.data, atol=1e-12, rtol=0)
    assert np.allclose(w.data.sum(axis=1), 1.0, atol=1e-12, rtol=0)


def test_matches_high_precision_direct_evaluation(rng):
    mpmath.mp.dps = 50
    q, k, v, kb = (rng.normal(size=s) for s in ((2, 4), (3, 4), (3, 4), (3, 4)))
    out = weighted_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(kb)).data
    for i in range(2):
        logits = [sum(mpmath.mpf(q[i, d]) * (mpmath.mpf(k[j, d]) + mpmath.mpf(kb[j, d])) for d in range(4))
                  / mpmath.sqrt(4) for j in range(3)]
        ex = [mpmath.exp(x) for x in logits]
        w = [e / sum(ex) for e in ex]
        ref = [float(sum(w[j] * mpmath.mpf(v[j, d]) for j in range(3))) for d in range(4)]
        assert np.allclose(out[i], ref, atol=1e-14, rtol=0)


def test_token_count_mismatch(rng):
    q = Tensor(rng.normal(size=(2, 4)))
    with pytest.raises(DimensionError):
        weighted_attention(q, Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(2, 4))),
                           Tensor(np.zeros((3, 4))))
    with pytest.raises(DimensionError):
        weighted_attention(q, Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4))),
                           Tensor(np.zeros((2, 4))))


# ---------------------------------------------------------------- keys, values, bias

def test_no_candidates_gives_context_only(rng):
    ctx = _ctx(rng)
    keys, values, bias = build_keys_values(None, ctx, None)
    assert keys.shape == (7, 6) and keys is values
    assert np.array_equal(bias.values.data, np.full(7, 1 / 7))


def test_two_candidates_three_map_rows(rng):
    ctx = _ctx(rng, H=3, T=4)
    p = np.array([0.8, 0.2])
    cand = Tensor(rng.normal(size=(2, 6)))
    keys, _, bias = build_keys_values(cand, ctx, Tensor(p))
    assert keys.shape[0] == 2 + 3 + 4
    assert np.array_equal(keys.data[:2], cand.data)
    assert np.array_equal(keys.data[2:5], ctx.map_embedding.data)
    u = 1.0 / 7
    assert bias.values.data.tolist() == [0.8, 0.2] + [u] * 7
    m = bias.matrix(6).data
    assert np.all(m == m[:, :1])


def test_history_tokens_switch(rng):
    ctx = _ctx(rng, H=3, T=4)
    keys, _, bias = build_keys_values(Tensor(rng.normal(size=(2, 6))), ctx, Tensor([0.5, 0.5]),
                                      include_history_tokens=False)
    assert keys.shape[0] == 5
    assert bias.values.data[2:].tolist() == [1 / 3] * 3


def test_uniform_candidates_matching_context_reduce_to_unbiased(rng):
    ctx = _ctx(rng, H=2, T=3)
    n = 5  # equals the number of context tokens
    keys, values, bias = build_keys_values(Tensor(rng.normal(size=(n, 6))), ctx, Tensor(np.full(n, 1 / n)))
    q = Tensor(rng.normal(size=(3, 6)))
    assert np.allclose(weighted_attention(q, keys, values, bias).data,
                       weighted_attention(q, keys, values, Tensor(np.zeros((10, 6)))).data, atol=1e-12)


def test_width_mismatch(rng):
    with pytest.raises(DimensionError):
        build_keys_values(Tensor(rng.normal(size=(2, 5))), _ctx(rng), Tensor([0.5, 0.5]))
    with pytest.raises(DimensionError):
        build_keys_values(Tensor(rng.normal(size=(2, 6))), _ctx(rng), Tensor([1.0]))


# ---------------------------------------------------------------- candidate embedding

def test_identical_frames_align_to_identity(rng):
    f = Frame((3.0, -2.0), 0.7)
    S = rng.normal(size=(3, 5, 2))
    assert np.allclose(align_candidates(Tensor(S), f, f).data, S, atol=1e-12)


def test_zero_gru_gives_zero_embeddings(small_net, rng):
    for k in small_net.store:
        if k.startswith("joint.gru."):
            small_net.store[k].data[...] = 0.0
    out = embed_candidates(Tensor(rng.normal(size=(4, 6, 2))), Frame((0, 0), 0), Frame((1, 1), 1),
                           small_net.store)
    assert np.array_equal(out.data, np.zeros((4, small_net.cfg.gru_hidden)))


def test_embedding_matches_frame_and_step_oracles(small_net, rng):
    fo, fs = Frame((10.0, 5.0), 2.0), Frame((-4.0, 1.0), -0.6)
    S = rng.normal(scale=10, size=(3, 8, 2))
    out = embed_candidates(Tensor(S), fo, fs, small_net.store).data
    for n in range(3):
        aligned = to_frame(from_frame(S[n], fo), fs) * 0.1
        h = np.zeros(small_net.cfg.gru_hidden)
        for t in range(8):
            h = gru_step(aligned[t], h, small_net.store, "joint.gru").data
        assert np.allclose(out[n], h, atol=1e-12)


# ---------------------------------------------------------------- joint learning process

def test_stack_one_trace(small_net, small_pair):
    a, b = agent_state(small_net, small_pair.a), agent_state(small_net, small_pair.b)
    trace = []
    joint_learning_process(small_net, a, b, stack_q=1, trace=trace)
    assert trace == [("update", "A", 0), ("update", "B", 0)]


def test_stack_two_repredicts_once_and_differs(small_net, small_pair):
    _live(small_net)
    a, b = agent_state(small_net, small_pair.a), agent_state(small_net, small_pair.b)
    t1, t2 = [], []
    h1 = joint_learning_process(small_net, a, b, stack_q=1, trace=t1)
    h2 = joint_learning_process(small_net, a, b, stack_q=2, trace=t2)
    assert [e for e in t2 if e[0] == "repredict"] == [("repredict", 0)]
    assert t2.index(("repredict", 0)) == 2 and len(t2) == 5
    assert not np.allclose(h1[0].h.data, h2[0].h.data)


def test_stack_below_one_rejected(small_net, small_pair):
    a, b = agent_state(small_net, small_pair.a), agent_state(small_net, small_pair.b)
    with pytest.raises(ConfigError):
        joint_learning_process(small_net, a, b, stack_q=0)


def test_b_update_reads_iteration_entry_candidates(small_net, small_pair):
    _live(small_net)
    a, b = agent_state(small_net, small_pair.a), agent_state(small_net, small_pair.b)
    ha, hb = joint_learning_process(small_net, a, b, stack_q=1)
    from prospectnet.joint import _candidate_tokens
    tok_a = _candidate_tokens(small_net, a.candidates, a.inputs.frame, b.inputs.frame)
    ref = joint_update(small_net, b.latent, b.context, tok_a, a.candidates.probabilities)
    assert np.array_equal(hb.h.data, ref.h.data)


def test_identity_residual_reproduces_marginal(small_net, small_pair):
    out = joint_predict(small_net, small_pair.a, small_pair.b)
    for inp, cands in ((small_pair.a, out.candidates_a), (small_pair.b, out.candidates_b)):
        marg, _, _ = marginal_predict(small_net, inp)
        assert cands.S.tobytes() == marg.S.tobytes()
        assert cands.p.tobytes() == marg.p.tobytes()


def test_joint_outputs_sum_to_one_and_repeat(small_net, small_pair):
    _live(small_net)
    o1 = joint_predict(small_net, small_pair.a, small_pair.b)
    o2 = joint_predict(small_net, small_pair.a, small_pair.b)
    for c in (o1.candidates_a, o1.candidates_b):
        assert abs(c.p.sum() - 1.0) < 1e-9
    assert o1.candidates_a.S.tobytes() == o2.candidates_a.S.tobytes()
    assert o1.latent_b.h.data.tobytes() == o2.latent_b.h.data.tobytes()


def test_gradient_flows_through_bias_path(small_net, small_pair, rng):
    _live(small_net)
    a = agent_state(small_net, small_pair.a)
    N = small_net.cfg.n_candidates
    tokens = Tensor(rng.normal(size=(N, small_net.cfg.embed_dim)))
    p = Tensor(rng.dirichlet(np.ones(N)), requires_grad=True)
    probe = Tensor(rng.normal(size=a.latent.h.shape))

    def loss():
        return ag.sum_(ag.mul(joint_update(small_net, a.latent, a.context, tokens, p).h, probe))

    res = check_gradients(loss, {"p": p})
    assert res.ok(1e-4), res
    assert np.abs(p.grad).max() > 1e-8


def test_joint_block_gradients(small_net, grad_pair, frozen_selection):
    from prospectnet.model import frozen_pair_target, joint_pair_loss
    _live(small_net, scale=0.3)
    D = frozen_pair_target(small_net, grad_pair)
    params = {k: t for k, t in small_net.store.items() if k.startswith("joint.")}
    res = check_gradients(frozen_selection(lambda: joint_pair_loss(small_net, grad_pair, D)), params,
                          max_per_tensor=4,
                          rng=np.random.default_rng(1))
    assert res.ok(1e-4), res
