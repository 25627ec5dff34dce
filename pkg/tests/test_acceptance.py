"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the training criteria take a few minutes.
"""
import time
import warnings

import numpy as np
import pytest

from conftest import split_shift_invariant
from oracles import nms_oracle, pair_distribution_oracle
from test_config import preset_mismatches
from test_feature_pipeline import brute_force_pairs, random_scenario
from test_metrics import compare_iou_with_oracle, compare_metrics_with_oracles
from prospectnet import autograd as ag
from prospectnet.autograd import Tensor
from prospectnet.estimators import MarginalPredictor, ProspectNet
from prospectnet.features import TargetSet, best_mode_displacement, mine_interactive_pairs, preset
from prospectnet.gradcheck import check_gradients
from prospectnet.joint import agent_state, build_keys_values, joint_predict, joint_update, weighted_attention
from prospectnet.marginal import ContextEncoding, marginal_predict
from prospectnet.model import ProspectModel, frozen_pair_target, joint_pair_loss
from prospectnet.nn import add_gru, gru_sequence, ParameterStore
from prospectnet.scoring import broadcast_pairs, gt_pair_distribution, select_topk_pairs
from prospectnet.synthetic import generate_dataset


@pytest.fixture
def report(capsys):
    def _report(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}", flush=True)
        assert ok, f"{name}: {detail}"
    return _report


def test_gradient_suite(report, small_net, grad_pair, frozen_selection):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    results = {}
    # whole joint loss, every parameter tensor, with a live attention output projection
    small_net.store["joint.Wo"].data[...] = rng.normal(scale=0.3, size=small_net.store["joint.Wo"].shape)
    D = frozen_pair_target(small_net, grad_pair)
    loss = frozen_selection(lambda: joint_pair_loss(small_net, grad_pair, D))
    params, zero_grad = split_shift_invariant(small_net.store, loss)
    results["pipeline"] = check_gradients(loss, params, max_per_tensor=2, rng=rng)
    # probability bias feeding the attention logits
    a = agent_state(small_net, grad_pair.a)
    N, E = small_net.cfg.n_candidates, small_net.cfg.embed_dim
    tokens = Tensor(rng.normal(size=(N, E)))
    p = Tensor(rng.dirichlet(np.ones(N)), requires_grad=True)
    probe = Tensor(rng.normal(size=a.latent.h.shape))
    results["bias path"] = check_gradients(
        lambda: ag.sum_(ag.mul(joint_update(small_net, a.latent, a.context, tokens, p).h, probe)), {"p": p})
    # recurrent cell: inputs and every gate parameter
    store = ParameterStore(np.random.default_rng(1))
    add_gru(store, "g", 2, 5)
    xs = Tensor(rng.normal(size=(6, 3, 2)), requires_grad=True)
    probe_h = Tensor(rng.normal(size=(3, 5)))
    results["gru"] = check_gradients(lambda: ag.sum_(ag.mul(gru_sequence(xs, store, "g"), probe_h)),
                                     {"xs": xs, **dict(store.items())}, max_per_tensor=6, rng=rng)
    elapsed = time.perf_counter() - t0
    n = sum(r.n_checked for r in results.values())
    worst = max(r.max_rel_error for r in results.values())
    ok = worst < 1e-4 and n >= 100 and elapsed < 120 and zero_grad < 1e-12
    report("gradient suite", ok, f"{n} points, max rel err {worst:.2e}, {elapsed:.1f} s, "
           f"softmax-invariant biases |grad| {zero_grad:.1e} "
           f"({', '.join(f'{k}={r.max_rel_error:.1e}' for k, r in results.items())})")


def test_weighted_attention_invariants(report):
    rng = np.random.default_rng(3)
    worst_rows, worst_const, single_exact = 0.0, 0.0, True
    for _ in range(200):
        nq, nk, d = rng.integers(1, 6), rng.integers(1, 9), rng.integers(1, 7)
        q, k, v = rng.normal(size=(nq, d)) * 3, rng.normal(size=(nk, d)) * 3, rng.normal(size=(nk, d))
        kb = rng.normal(size=(nk, d))
        _, w = weighted_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(kb), return_weights=True)
        worst_rows = max(worst_rows, float(np.abs(w.data.sum(axis=1) - 1).max()))
        const = np.tile(rng.normal(size=d), (nk, 1))
        biased = weighted_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(const)).data
        plain = weighted_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(np.zeros((nk, d)))).data
        worst_const = max(worst_const, float(np.abs(biased - plain).max()))
        one = weighted_attention(Tensor(q), Tensor(k[:1]), Tensor(v[:1]), Tensor(kb[:1])).data
        single_exact &= bool(np.array_equal(one, np.repeat(v[:1], nq, axis=0)))
    # bias of uniform candidate probabilities equal to the context share is a constant bias
    ctx = ContextEncoding(Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(3, 4))))
    keys, values, bias = build_keys_values(Tensor(rng.normal(size=(5, 4))), ctx, Tensor(np.full(5, 0.2)))
    q = Tensor(rng.normal(size=(2, 4)))
    worst_const = max(worst_const, float(np.abs(weighted_attention(q, keys, values, bias).data - weighted_attention(
        q, keys, values, Tensor(np.zeros((10, 4)))).data).max()))
    ok = worst_rows <= 1e-12 and worst_const <= 1e-12 and single_exact
    report("weighted attention invariants", ok,
           f"row-sum err {worst_rows:.1e}, constant-bias err {worst_const:.1e}, single-token exact={single_exact}")


def test_identity_baseline(report, small_cfg):
    mismatches = 0
    for seed, scene in enumerate(generate_dataset("mixed", 4, seed=31)):
        net = ProspectModel(small_cfg, seed=seed)
        from prospectnet.model import prepare_pair
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pair = prepare_pair(scene, small_cfg)
            out = joint_predict(net, pair.a, pair.b)
            for inp, cands in ((pair.a, out.candidates_a), (pair.b, out.candidates_b)):
                marg, _, _ = marginal_predict(net, inp)
                mismatches += cands.S.tobytes() != marg.S.tobytes() or cands.p.tobytes() != marg.p.tobytes()
    report("identity baseline", mismatches == 0, f"{mismatches} bitwise mismatches over 4 scenes x 2 agents")


def test_pair_distribution_oracle(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(500):
        d = rng.uniform(0, 30, rng.integers(1, 37))
        alpha = float(rng.uniform(0.05, 5))
        worst = max(worst, float(np.abs(gt_pair_distribution(d, alpha) - pair_distribution_oracle(d, alpha)).max()))
    example = gt_pair_distribution([1.0, 3.0], 1.0)
    ok = worst <= 1e-12 and np.allclose(example, [0.7311, 0.2689], atol=1e-4, rtol=0)
    report("pair distribution oracle", ok, f"max err {worst:.1e}; d=(1,3), alpha=1 -> {np.round(example, 4).tolist()}")


def test_metric_oracles(report):
    m = compare_metrics_with_oracles(np.random.default_rng(2025), 100)
    iou = compare_iou_with_oracle(np.random.default_rng(2026), 500)
    report("metric oracle equivalence", m <= 1e-9 and iou <= 1e-9,
           f"metrics max err {m:.1e} (100 instances), IoU max err {iou:.1e} (500 rectangle pairs)")


def test_nms_oracle(report):
    rng = np.random.default_rng(11)
    mismatches, violations = 0, 0
    for _ in range(1000):
        N = int(rng.integers(1, 6))
        Sa, Sb = rng.normal(scale=2, size=(N, 3, 2)), rng.normal(scale=2, size=(N, 3, 2))
        idx = broadcast_pairs(N)
        Ta, Tb, n = Sa[idx[:, 0]], Sb[idx[:, 1]], N * N
        s = rng.dirichlet(np.ones(n))
        if n > 1 and rng.random() < 0.3:
            s[1] = s[0]
        k = int(rng.integers(1, n + 1))
        sel = select_topk_pairs(Ta, Tb, s, k, 2.0, 0.5)
        ref, eps = nms_oracle(Ta[:, -1].tolist(), Tb[:, -1].tolist(), s.tolist(), k, 2.0, 0.5)
        mismatches += sel.indices.tolist() != ref or sel.thresholds.tolist() != eps
        # each accepted pair is at least its acceptance threshold from every pair accepted before it
        order = sorted(range(len(sel.indices)), key=lambda i: -sel.thresholds[i])
        for pos, i in enumerate(order):
            for j in order[:pos]:
                a, b = sel.indices[i], sel.indices[j]
                dist = max(np.linalg.norm(Ta[a, -1] - Ta[b, -1]), np.linalg.norm(Tb[a, -1] - Tb[b, -1]))
                violations += dist < sel.thresholds[i]
    report("NMS oracle", mismatches == 0 and violations == 0,
           f"{mismatches} mismatches, {violations} separation violations over 1000 trials (N <= 5 per agent)")


def test_mining(report):
    rng = np.random.default_rng(17)
    mismatches, non_monotone = 0, 0
    for _ in range(200):
        s = random_scenario(rng, n_agents=8)
        previous = set()
        for thr in (1.0, 3.0, 5.0, 10.0):
            got = mine_interactive_pairs(s, thr)
            mismatches += got != brute_force_pairs(s, thr)
            non_monotone += not previous <= set(got)
            previous = set(got)
    report("mining", mismatches == 0 and non_monotone == 0,
           f"{mismatches} brute-force mismatches, {non_monotone} monotonicity violations (200 scenes x 8 agents)")


def test_bmd_properties(report):
    rng = np.random.default_rng(19)
    violations = 0
    for _ in range(500):
        pts = rng.uniform(-80, 80, (int(rng.integers(2, 60)), 2))
        sub = pts[rng.permutation(len(pts))[: int(rng.integers(1, len(pts)))]]
        end = rng.uniform(-100, 100, 2)
        violations += best_mode_displacement(TargetSet(pts, preset(4)), end) > \
            best_mode_displacement(TargetSet(sub, preset(4)), end)
    bad = preset_mismatches()
    report("BMD properties", violations == 0 and not bad,
           f"{violations} superset violations (500 trials); preset mismatches: {bad or 'none'}")


@pytest.mark.slow
def test_overfit(report):
    t0 = time.perf_counter()
    scenes = generate_dataset("yield_turn", 32, seed=1)
    est = ProspectNet(steps=2000, batch_size=1, seed=0).fit(scenes)
    ade = est.evaluate(scenes)["minADE"]
    elapsed = time.perf_counter() - t0
    report("overfit", ade < 0.5 and elapsed < 600,
           f"training-set joint minADE {ade:.3f} m after 2000 steps on 32 yield scenes, {elapsed:.0f} s")


@pytest.mark.slow
def test_directional(report):
    rows = []
    for seed in (0, 1, 2):
        train = generate_dataset("mixed", 200, seed=100 + seed)
        test = generate_dataset("mixed", 200, seed=900 + seed)
        marginal = MarginalPredictor(steps=1000, seed=seed).fit(train)
        joint = ProspectNet(steps=1000, seed=seed).fit(train, init_from=marginal)
        rows.append((joint.evaluate(test)["minFDE"], marginal.evaluate(test)["minFDE"]))
    per_seed = ", ".join(f"seed {i}: joint {j:.3f} / baseline {b:.3f}{'' if j <= b else ' (violation)'}"
                         for i, (j, b) in enumerate(rows))
    mj, mb = np.mean([r[0] for r in rows]), np.mean([r[1] for r in rows])
    report("directional", mj <= mb, f"mean joint minFDE {mj:.3f} <= baseline {mb:.3f}? [{per_seed}]")
