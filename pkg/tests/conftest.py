import warnings

import numpy as np
import pytest

from prospectnet.config import ModelConfig
from prospectnet.model import ProspectModel, prepare_pair
from prospectnet.synthetic import generate_synthetic


@pytest.fixture(scope="session")
def yield_scene():
    return generate_synthetic("yield_turn", 3)


@pytest.fixture(scope="session")
def small_cfg():
    # narrow widths keep finite-difference sweeps quick
    return ModelConfig(embed_dim=6, hidden=8, gru_hidden=5, n_candidates=4, top_k=3, horizon=30)


@pytest.fixture(scope="session")
def small_pair(yield_scene, small_cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return prepare_pair(yield_scene, small_cfg)


def trim_targets(inp, n=40):
    """Keep ``n`` evenly spread targets plus the positive one (fewer ReLU kinks near probe points)."""
    from dataclasses import replace
    from prospectnet.features import TargetSet
    pts = inp.targets.points
    keep = np.unique(np.concatenate([np.linspace(0, len(pts) - 1, n).astype(int), [inp.positive]]))
    return replace(inp, targets=TargetSet(pts[keep], inp.targets.params),
                   positive=int(np.searchsorted(keep, inp.positive)))


@pytest.fixture(scope="session")
def grad_pair(small_pair):
    from dataclasses import replace
    return replace(small_pair, a=trim_targets(small_pair.a), b=trim_targets(small_pair.b))


@pytest.fixture
def frozen_selection(monkeypatch):
    """Wrap a loss so every call reuses the top-N candidate indices chosen on the first call.

    Candidate selection is a discrete argmax; finite differences across a near-tie
    would measure a jump rather than a derivative.
    """
    import prospectnet.marginal as marginal
    original = marginal.top_indices
    recorded, state = [], {"replay": False, "i": 0}

    def patched(p, n):
        if state["replay"]:
            idx = recorded[state["i"]]
            state["i"] += 1
            return idx
        idx = original(p, n)
        recorded.append(idx)
        return idx

    monkeypatch.setattr(marginal, "top_indices", patched)

    def wrap(loss_fn):
        def frozen():
            state["i"] = 0
            out = loss_fn()
            state["replay"] = True
            return out
        return frozen
    return wrap


# Output biases feeding a softmax: their gradient is exactly zero by shift invariance,
# so finite differences would only see roundoff.  Tests check them against zero instead.
SHIFT_INVARIANT = ("goal.l2.b", "scorer.l2.b")


def split_shift_invariant(store, loss_fn):
    """(parameters for finite differences, max |analytic grad| over the shift-invariant ones)."""
    from prospectnet.autograd import backward
    store.zero_grad()
    backward(loss_fn())
    zero_grad = max(float(np.abs(store[k].grad).max()) if store[k].grad is not None else 0.0
                    for k in SHIFT_INVARIANT)
    return {k: t for k, t in store.items() if k not in SHIFT_INVARIANT}, zero_grad


@pytest.fixture
def small_net(small_cfg):
    return ProspectModel(small_cfg, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
