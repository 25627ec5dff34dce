"""scikit-learn style estimators around the marginal and joint models."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import fields
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autograd as ag
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig, TrainConfig
from .metrics import evaluate, record_from_scenario
from .model import (PairInputs, ProspectModel, joint_pair_loss, marginal_pair_loss, predict_joint_pairs,
                    predict_marginal_pairs, prepare_pair)
from .nn import Adam
from .scenario_io import read_scenarios
from .scene import PairPrediction, Scenario, ScenarioValidationError

log = logging.getLogger(__name__)

_MODEL_FIELDS = [f.name for f in fields(ModelConfig)]
_TRAIN_FIELDS = [f.name for f in fields(TrainConfig)]


def check_scenarios(X, require_future: bool = False) -> list[Scenario]:
    """Accept a scenario, a sequence of scenarios or a path to a scenario file."""
    if isinstance(X, Scenario):
        X = [X]
    elif isinstance(X, (str, bytes)) or hasattr(X, "__fspath__"):
        X = read_scenarios(X)
    X = list(X)
    if not X:
        raise ValueError("no scenarios given")
    for s in X:
        if not isinstance(s, Scenario):
            raise TypeError(f"expected Scenario, got {type(s).__name__}")
        if len(s.predictable_ids()) < 2:
            raise ScenarioValidationError(f"scenario {s.id}: needs two predictable agents")
        if require_future and not s.has_future:
            raise ScenarioValidationError(f"scenario {s.id}: ground-truth future required for training")
    return X


def check_pairs(X, pairs) -> list:
    if pairs is None:
        return [None] * len(X)
    pairs = list(pairs)
    if len(pairs) != len(X):
        raise ValueError(f"{len(pairs)} pairs for {len(X)} scenarios")
    return pairs


def train_loop(net: ProspectModel, data: Sequence[PairInputs], loss_fn: Callable, train: TrainConfig,
               log_every: int = 100, callback: Callable | None = None) -> list[float]:
    """Adam over shuffled minibatches; returns the per-step mean loss."""
    opt = Adam(net.store, lr=train.lr, clip_norm=train.clip_norm)
    rng = np.random.default_rng(train.seed)
    queue: list[int] = []
    history = []
    t0 = time.perf_counter()
    for step in range(train.steps):
        net.store.zero_grad()
        while len(queue) < train.batch_size:
            queue += list(rng.permutation(len(data)))
        batch, queue = queue[:train.batch_size], queue[train.batch_size:]
        total = 0.0
        for i in batch:
            loss = ag.mul(loss_fn(net, data[i]), 1.0 / len(batch))
            ag.backward(loss)
            total += loss.item()
        opt.step()
        history.append(total)
        if log_every and (step % log_every == 0 or step == train.steps - 1):
            log.info("step %d loss %.4f (%.1fs)", step, total, time.perf_counter() - t0)
        if callback is not None:
            callback(step, total)
    return history


class _PairEstimator(BaseEstimator):
    _loss = None  # set by subclasses

    def __init__(self, embed_dim=32, hidden=64, gru_hidden=32, n_candidates=16, top_k=6, stack_q=1,
                 include_history_tokens=True, use_heading=True, encode_radius=60.0, huber_delta=1.0,
                 alpha=1.0, nms_eps0=2.0, nms_gamma=0.5, history_len=10, horizon=30, preset=4,
                 lr=1e-3, steps=2000, batch_size=1, seed=0, clip_norm=10.0):
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.gru_hidden = gru_hidden
        self.n_candidates = n_candidates
        self.top_k = top_k
        self.stack_q = stack_q
        self.include_history_tokens = include_history_tokens
        self.use_heading = use_heading
        self.encode_radius = encode_radius
        self.huber_delta = huber_delta
        self.alpha = alpha
        self.nms_eps0 = nms_eps0
        self.nms_gamma = nms_gamma
        self.history_len = history_len
        self.horizon = horizon
        self.preset = preset
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed
        self.clip_norm = clip_norm

    # -- configuration

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{k: getattr(self, k) for k in _MODEL_FIELDS}).validate()

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in _TRAIN_FIELDS})

    @classmethod
    def from_config(cls, model: ModelConfig, train: TrainConfig | None = None, **overrides):
        params = {k: getattr(model, k) for k in _MODEL_FIELDS}
        if train is not None:
            params.update({k: getattr(train, k) for k in _TRAIN_FIELDS})
        params.update(overrides)
        return cls(**params)

    # -- fitting

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def _new_model(self) -> ProspectModel:
        return ProspectModel(self.model_config(), seed=self.seed)

    def prepare(self, X, pairs=None, require_future=False) -> list[PairInputs]:
        X = check_scenarios(X, require_future)
        cfg = self.model_config()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return [prepare_pair(s, cfg, p) for s, p in zip(X, check_pairs(X, pairs))]

    def fit(self, X, y=None, pairs=None, init_state: dict | None = None, callback=None):
        """Train on scenarios with ground truth.  ``y`` is ignored (targets live in the scenarios)."""
        data = self.prepare(X, pairs, require_future=True)
        for d in data:
            if d.a.positive is None or d.b.positive is None:
                raise ScenarioValidationError(f"scenario {d.scenario_id}: no targets for an agent")
        self.model_ = self._new_model()
        if init_state is not None:
            self.model_.store.load_state_dict(init_state, strict=False)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.loss_history_ = train_loop(self.model_, data, type(self)._loss, self.train_config(),
                                            callback=callback)
        return self

    # -- inference

    def _predict_one(self, pair: PairInputs) -> list[PairPrediction]:
        raise NotImplementedError

    def predict(self, X, pairs=None) -> list[list[PairPrediction]]:
        """Top-K world-frame pair predictions per scenario, score-descending."""
        self._check_fitted()
        data = self.prepare(X, pairs)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return [self._predict_one(d) for d in data]

    def predict_with_agents(self, X, pairs=None):
        self._check_fitted()
        data = self.prepare(X, pairs)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return [(d.scenario_id, d.agents, self._predict_one(d)) for d in data]

    def evaluate(self, X, pairs=None) -> dict:
        X = check_scenarios(X, require_future=True)
        out = self.predict_with_agents(X, pairs)
        return evaluate([record_from_scenario(s, agents, preds) for s, (_, agents, preds) in zip(X, out)])

    def score(self, X, y=None) -> float:
        """Negative mean minFDE (larger is better)."""
        return -self.evaluate(X)["minFDE"]

    # -- persistence

    def state_dict(self) -> dict:
        self._check_fitted()
        return self.model_.store.state_dict()

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict())

    def load(self, path, strict: bool = True):
        state = load_checkpoint(path)
        self.model_ = self._new_model()
        try:
            self.model_.store.load_state_dict(state, strict=strict)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{path}: checkpoint does not match the model configuration ({exc})") from None
        return self


class MarginalPredictor(_PairEstimator):
    """Per-agent target-driven predictor; pairs come from the Cartesian product of mode probabilities."""

    _loss = staticmethod(marginal_pair_loss)

    def _predict_one(self, pair):
        return predict_marginal_pairs(self.model_, pair, self.top_k)


class ProspectNet(_PairEstimator):
    """Joint two-agent predictor with probability-weighted cross-attention and pair scoring."""

    _loss = staticmethod(joint_pair_loss)

    def fit(self, X, y=None, pairs=None, init_from: MarginalPredictor | dict | None = None, callback=None):
        """Train jointly; ``init_from`` warm-starts shared weights from a marginal model or state dict."""
        state = init_from.state_dict() if isinstance(init_from, MarginalPredictor) else init_from
        return super().fit(X, y, pairs, init_state=state, callback=callback)

    def _predict_one(self, pair):
        return predict_joint_pairs(self.model_, pair, self.top_k)

    def marginal_predict(self, X, pairs=None) -> list[list[PairPrediction]]:
        """Cartesian-product pairs from this model's marginal heads (no joint refinement)."""
        self._check_fitted()
        data = self.prepare(X, pairs)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return [predict_marginal_pairs(self.model_, d, self.top_k) for d in data]
