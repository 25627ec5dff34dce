import math
import time

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import split_shift_invariant
from prospectnet import autograd as ag
from prospectnet.autograd import ContractError, DimensionError, Tensor, backward
from prospectnet.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from prospectnet.gradcheck import check_gradients, relative_error
from prospectnet.nn import (Adam, ParameterStore, add_gru, add_mlp2, cross_entropy, gru_sequence, gru_step,
                            mlp2)

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------- softmax

def test_softmax_single_element():
    assert ag.softmax_rows(Tensor([[3.7]])).data.tolist() == [[1.0]]


def test_softmax_ln3_row():
    out = ag.softmax_rows(Tensor([0.0, math.log(3.0)])).data
    assert np.allclose(out, [0.25, 0.75], atol=1e-15)


def test_softmax_shift_example():
    base = ag.softmax_rows(Tensor([0.0, 0.0, math.log(3)])).data
    for c in (-7.5, 0.3, 11.0):
        assert np.allclose(ag.softmax_rows(Tensor([c, c, c + math.log(3)])).data, base, atol=1e-15)


def test_softmax_empty_raises():
    with pytest.raises(DimensionError):
        ag.softmax_rows(Tensor(np.zeros((2, 0))))


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite),
       hnp.arrays(np.float64, 5, elements=finite))
def test_softmax_rows_stochastic_and_shift_invariant(m, shift):
    s = ag.softmax_rows(Tensor(m)).data
    assert np.all(s >= 0)
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    shifted = ag.softmax_rows(Tensor(m + shift[: m.shape[0], None])).data
    assert np.allclose(s, shifted, atol=1e-12, rtol=0)


# ---------------------------------------------------------------- gru

def _gru_store(n_in, n_hid, seed=0):
    store = ParameterStore(seed)
    add_gru(store, "g", n_in, n_hid)
    return store


def test_gru_zero_fixed_point():
    store = _gru_store(3, 4)
    for k in store:
        store[k].data[...] = 0.0
    out = gru_step(np.zeros(3), np.zeros(4), store, "g")
    assert np.array_equal(out.data, np.zeros(4))


def test_gru_saturated_update_gate_keeps_state(rng):
    store = _gru_store(3, 4)
    store["g.bz"].data[...] = 1e3
    h = rng.uniform(-0.9, 0.9, 4)
    out = gru_step(rng.normal(size=3), h, store, "g")
    assert np.allclose(out.data, h, atol=1e-12)


def _mp_sigmoid(x):
    return 1 / (1 + mpmath.exp(-x))


def test_gru_step_matches_high_precision_gate_equations(rng):
    mpmath.mp.dps = 40
    store = _gru_store(3, 3, seed=7)
    x, h = rng.normal(size=3), rng.uniform(-1, 1, 3)
    out = gru_step(x, h, store, "g").data
    P = {k: mpmath.matrix(store[k].data.tolist()) if store[k].data.ndim == 2 else store[k].data.tolist()
         for k in store}

    def aff(W, U, b, xv, hv):
        return [sum(mpmath.mpf(xv[i]) * W[i, j] for i in range(3)) + sum(hv[i] * U[i, j] for i in range(3))
                + mpmath.mpf(b[j]) for j in range(3)]

    hm = [mpmath.mpf(v) for v in h]
    z = [_mp_sigmoid(v) for v in aff(P["g.Wz"], P["g.Uz"], P["g.bz"], x, hm)]
    r = [_mp_sigmoid(v) for v in aff(P["g.Wr"], P["g.Ur"], P["g.br"], x, hm)]
    rh = [r[i] * hm[i] for i in range(3)]
    n = [mpmath.tanh(v) for v in aff(P["g.Wn"], P["g.Un"], P["g.bn"], x, rh)]
    ref = [float((1 - z[j]) * n[j] + z[j] * hm[j]) for j in range(3)]
    assert np.allclose(out, ref, atol=1e-13, rtol=0)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, 3, elements=finite), hnp.arrays(np.float64, 4, elements=finite))
def test_gru_output_bounded(x, h):
    store = _gru_store(3, 4)
    out = gru_step(x, np.tanh(h), store, "g").data
    assert np.all(np.abs(out) <= 1.0)


def test_gru_shape_mismatch():
    store = _gru_store(3, 4)
    with pytest.raises(DimensionError):
        gru_step(np.zeros(2), np.zeros(4), store, "g")


def test_gru_sequence_bit_identical_to_chained_steps(rng):
    store = _gru_store(2, 5, seed=3)
    xs = rng.normal(size=(7, 4, 2))
    h = np.zeros((4, 5))
    for t in range(7):
        h = gru_step(xs[t], h, store, "g").data
    assert np.array_equal(gru_sequence(Tensor(xs), store, "g").data, h)


def test_gru_sequence_gradient_matches_chained_steps(rng):
    store = _gru_store(2, 3, seed=3)
    xs = Tensor(rng.normal(size=(5, 2, 2)), requires_grad=True)
    w = rng.normal(size=(2, 3))
    backward(ag.sum_(ag.mul(gru_sequence(xs, store, "g"), Tensor(w))))
    fused = {k: store[k].grad.copy() for k in store}
    gx = xs.grad.copy()
    store.zero_grad()
    xs.grad = None
    h = Tensor(np.zeros((2, 3)))
    for t in range(5):
        h = gru_step(xs[t], h, store, "g")
    backward(ag.sum_(ag.mul(h, Tensor(w))))
    for k in store:
        assert np.allclose(fused[k], store[k].grad, atol=1e-13)
    assert np.allclose(gx, xs.grad, atol=1e-13)


# ---------------------------------------------------------------- mlp2

def _mlp_store(n_in, n_hid, n_out, seed=0):
    store = ParameterStore(seed)
    add_mlp2(store, "m", n_in, n_hid, n_out)
    return store


def test_mlp2_zero_weights_gives_bias():
    store = _mlp_store(3, 4, 2)
    for k in store:
        store[k].data[...] = 0.0
    store["m.l2.b"].data[...] = [1.5, -2.0]
    assert np.array_equal(mlp2(np.array([1.0, 2.0, 3.0]), store, "m").data, [1.5, -2.0])


def test_mlp2_identity_pass_through():
    store = _mlp_store(3, 3, 3)
    store["m.l1.W"].data[...] = np.eye(3)
    store["m.l2.W"].data[...] = np.eye(3)
    x = np.array([0.5, 2.0, 0.0])
    assert np.array_equal(mlp2(x, store, "m").data, x)


def test_mlp2_matches_direct_arithmetic(rng):
    store = _mlp_store(4, 8, 1, seed=11)
    for k in store:
        store[k].data[...] = rng.normal(size=store[k].shape)
    x = rng.normal(size=4)
    s = {k: store[k].data for k in store}
    ref = np.maximum(x @ s["m.l1.W"] + s["m.l1.b"], 0) @ s["m.l2.W"] + s["m.l2.b"]
    assert np.allclose(mlp2(x, store, "m").data, ref, atol=1e-12, rtol=0)


def test_mlp2_width_mismatch():
    with pytest.raises(DimensionError):
        mlp2(np.zeros(5), _mlp_store(4, 8, 1), "m")


# ---------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    store = ParameterStore(0)
    p = store.add("p", (3, 2))
    backward(ag.sum_(p))
    assert np.array_equal(store.grads()["p"], np.ones((3, 2)))


def test_backward_zero_times_p_gives_zeros():
    store = ParameterStore(0)
    p = store.add("p", (4,))
    store.add("untouched", (2,))
    backward(ag.sum_(ag.mul(p, 0.0)))
    g = store.grads()
    assert np.array_equal(g["p"], np.zeros(4))
    assert np.array_equal(g["untouched"], np.zeros(2))


def test_backward_rejects_non_scalar():
    store = ParameterStore(0)
    with pytest.raises(ContractError):
        backward(ag.mul(store.add("p", (3,)), 2.0))


def test_checked_mode_rejects_nan():
    with pytest.raises(ValueError):
        Tensor([1.0, float("nan")])


def test_forward_is_deterministic(small_net, small_pair):
    from prospectnet.model import joint_pair_loss
    a = joint_pair_loss(small_net, small_pair).data
    b = joint_pair_loss(small_net, small_pair).data
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("op", ["add_row", "mul", "div", "matmul", "relu", "tanh", "sigmoid", "exp", "log",
                                "huber", "softmax", "log_softmax", "segment_max", "concat", "take",
                                "repeat", "transpose", "mean"])
def test_op_gradients(op, rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    v = Tensor(rng.normal(size=4), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    fns = {
        "add_row": lambda: ag.add(a, v),
        "mul": lambda: ag.mul(a, b),
        "div": lambda: ag.div(a, pos),
        "matmul": lambda: a @ w,
        "relu": lambda: ag.relu(a),
        "tanh": lambda: ag.tanh(a),
        "sigmoid": lambda: ag.sigmoid(a),
        "exp": lambda: ag.exp(a),
        "log": lambda: ag.log(pos),
        "huber": lambda: ag.huber(ag.mul(a, 2.0), 1.0),
        "softmax": lambda: ag.softmax_rows(a),
        "log_softmax": lambda: ag.log_softmax_rows(a),
        "segment_max": lambda: ag.segment_max(a, np.array([0, 1, 0]), 2),
        "concat": lambda: ag.concat([a, b], axis=1),
        "take": lambda: ag.take(a, np.array([2, 0, 2])),
        "repeat": lambda: ag.add(ag.repeat_rows(v, 3), ag.repeat_cols(ag.sum_(a, axis=1), 4)),
        "transpose": lambda: a.T @ b,
        "mean": lambda: ag.mean(a, axis=0),
    }
    probe = Tensor(rng.normal(size=fns[op]().shape))
    res = check_gradients(lambda: ag.sum_(ag.mul(fns[op](), probe)),
                          {"a": a, "b": b, "v": v, "w": w, "pos": pos})
    assert res.ok(1e-4), (op, res)


def test_relative_error_floor():
    assert relative_error(np.array(0.0), np.array(1e-9)) <= 1e-2


# ---------------------------------------------------------------- optimizer, cross-entropy

def test_cross_entropy_uniform_is_log_m():
    assert math.isclose(cross_entropy(Tensor(np.zeros(7)), 3).item(), math.log(7), rel_tol=1e-14)


def test_adam_reduces_quadratic():
    store = ParameterStore(0)
    p = store.add("p", (5,), value=np.full(5, 3.0))
    opt = Adam(store, lr=0.1)
    for _ in range(300):
        store.zero_grad()
        backward(ag.sum_(ag.mul(p, p)))
        opt.step()
    assert np.abs(p.data).max() < 0.05


def test_parameter_store_is_name_ordered_and_seeded():
    s1, s2 = ParameterStore(4), ParameterStore(4)
    for s in (s1, s2):
        s.add("zeta", (2, 2))
        s.add("alpha", (3,))
    assert list(s1) == ["alpha", "zeta"]
    assert all(np.array_equal(s1[k].data, s2[k].data) for k in s1)
    with pytest.raises(KeyError):
        s1.add("alpha", (3,))


def test_glorot_bounds():
    s = ParameterStore(0)
    w = s.add("w", (30, 20)).data
    assert np.abs(w).max() <= math.sqrt(6 / 50)


# ---------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip(tmp_path, rng):
    state = {"b.vec": rng.normal(size=5), "a.mat": rng.normal(size=(3, 4)), "c.scalar": np.array(2.5)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state)
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    # first record: name length as little-endian u64, then the sorted-first name
    assert int.from_bytes(raw[8:16], "little") == len("a.mat")
    assert raw[16:21] == b"a.mat"
    back = load_checkpoint(path)
    assert sorted(back) == sorted(state)
    for k in state:
        assert back[k].tobytes() == np.asarray(state[k]).tobytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\0" * 8)
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_checkpoint_rejects_truncation(tmp_path, rng):
    p = tmp_path / "t.ckpt"
    save_checkpoint(p, {"w": rng.normal(size=(4, 4))})
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_full_pipeline_gradients_match_finite_differences(small_net, grad_pair, frozen_selection):
    """Joint loss on a two-agent scene, probing a few entries of every parameter."""
    from prospectnet.model import frozen_pair_target, joint_pair_loss
    # give the zero-initialized output projection a value so the attention path is live
    small_net.store["joint.Wo"].data[...] = np.random.default_rng(1).normal(scale=0.3, size=(6, 6))
    t0 = time.perf_counter()
    D = frozen_pair_target(small_net, grad_pair)
    loss = frozen_selection(lambda: joint_pair_loss(small_net, grad_pair, D))
    params, zero_grad = split_shift_invariant(small_net.store, loss)
    assert zero_grad < 1e-12
    res = check_gradients(loss, params, max_per_tensor=2, rng=np.random.default_rng(0))
    assert res.ok(1e-4), res
    assert res.n_checked >= 60
    assert time.perf_counter() - t0 < 120
