"""Parameters, layers and the optimizer built on :mod:`prospectnet.autograd`."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .autograd import (
    ContractError,
    DimensionError,
    Tensor,
    _node,
    _sigmoid,
    add,
    as_tensor,
    log_softmax_rows,
    matmul,
    mul,
    relu,
    sigmoid,
    softmax_rows,
    tanh,
)

__all__ = [
    "ParameterStore",
    "glorot_uniform",
    "softmax_rows",
    "gru_step",
    "gru_sequence",
    "mlp2",
    "cross_entropy",
    "Adam",
]

GRU_GATES = ("z", "r", "n")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParameterStore:
    """Named trainable tensors, iterated in sorted-name order."""

    def __init__(self, seed: int = 0):
        self._params: dict[str, Tensor] = {}
        self.rng = np.random.default_rng(seed)

    def add(self, name: str, shape, init: str = "glorot", value=None) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if value is not None:
            data = np.array(value, dtype=np.float64).reshape(shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "glorot":
            fan_in = shape[0] if len(shape) > 1 else 1
            fan_out = shape[1] if len(shape) > 1 else shape[0]
            data = glorot_uniform(self.rng, fan_in, fan_out, shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def items(self):
        return [(k, self._params[k]) for k in sorted(self._params)]

    def names(self) -> list[str]:
        return sorted(self._params)

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradient of every parameter; parameters the loss never touched get zeros."""
        return {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in self.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for k, v in state.items():
            if k not in self._params:
                if strict:
                    raise KeyError(f"unexpected parameter {k!r}")
                continue
            if self._params[k].shape != np.shape(v):
                raise DimensionError(f"{k}: shape {np.shape(v)} != {self._params[k].shape}")
            self._params[k].data = np.array(v, dtype=np.float64)
        if strict:
            missing = set(self._params) - set(state)
            if missing:
                raise KeyError(f"missing parameters {sorted(missing)}")


# ---------------------------------------------------------------- layers

def add_linear(store: ParameterStore, prefix: str, n_in: int, n_out: int, bias: bool = True,
               zero: bool = False) -> None:
    store.add(f"{prefix}.W", (n_in, n_out), init="zeros" if zero else "glorot")
    if bias:
        store.add(f"{prefix}.b", (n_out,), init="zeros")


def add_mlp2(store: ParameterStore, prefix: str, n_in: int, n_hidden: int, n_out: int) -> None:
    add_linear(store, f"{prefix}.l1", n_in, n_hidden)
    add_linear(store, f"{prefix}.l2", n_hidden, n_out)


def add_gru(store: ParameterStore, prefix: str, n_in: int, n_hidden: int) -> None:
    for g in GRU_GATES:
        store.add(f"{prefix}.W{g}", (n_in, n_hidden))
        store.add(f"{prefix}.U{g}", (n_hidden, n_hidden))
        store.add(f"{prefix}.b{g}", (n_hidden,), init="zeros")


def linear(x: Tensor, store: ParameterStore, prefix: str) -> Tensor:
    y = matmul(x, store[f"{prefix}.W"])
    b = f"{prefix}.b"
    return add(y, store[b]) if b in store else y


def _as_matrix(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 1:
        return x.reshape(1, x.shape[0]), True
    return x, False


def mlp2(x, store: ParameterStore, prefix: str) -> Tensor:
    """affine -> ReLU -> affine, applied to a vector or to each row of a matrix."""
    x = as_tensor(x)
    w1 = store[f"{prefix}.l1.W"]
    if x.shape[-1] != w1.shape[0]:
        raise DimensionError(f"{prefix}: input width {x.shape[-1]} != {w1.shape[0]}")
    xm, squeeze = _as_matrix(x)
    y = linear(relu(linear(xm, store, f"{prefix}.l1")), store, f"{prefix}.l2")
    return y.reshape(y.shape[1]) if squeeze else y


def gru_step(x, h, store: ParameterStore, prefix: str = "gru") -> Tensor:
    """One gated recurrent update; the reset gate scales h before the candidate matmul.

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    n = tanh(x Wn + (r*h) Un + bn), h' = (1 - z) * n + z * h.
    Works on single vectors or on row batches.
    """
    x, h = as_tensor(x), as_tensor(h)
    Wz = store[f"{prefix}.Wz"]
    if x.shape[-1] != Wz.shape[0] or h.shape[-1] != Wz.shape[1]:
        raise DimensionError(f"gru_step: x {x.shape} / h {h.shape} vs weights {Wz.shape}")
    if x.ndim != h.ndim or (x.ndim == 2 and x.shape[0] != h.shape[0]):
        raise DimensionError("gru_step: x and h batch layouts differ")
    xm, squeeze = _as_matrix(x)
    hm, _ = _as_matrix(h)

    def gate(g):
        return add(add(matmul(xm, store[f"{prefix}.W{g}"]), matmul(hm, store[f"{prefix}.U{g}"])),
                   store[f"{prefix}.b{g}"])

    z = sigmoid(gate("z"))
    r = sigmoid(gate("r"))
    n = tanh(add(add(matmul(xm, store[f"{prefix}.Wn"]), matmul(mul(r, hm), store[f"{prefix}.Un"])),
                 store[f"{prefix}.bn"]))
    out = add(mul(add(mul(z, -1.0), 1.0), n), mul(z, hm))
    return out.reshape(out.shape[1]) if squeeze else out


def gru_sequence(xs: Tensor, store: ParameterStore, prefix: str = "gru", h0=None) -> Tensor:
    """Run :func:`gru_step` over a (T, B, D) sequence and return the final (B, H) state.

    Single tape node with hand-written backpropagation through time; numerically
    identical to chaining ``gru_step`` calls.
    """
    xs = as_tensor(xs)
    W = {g: store[f"{prefix}.W{g}"] for g in GRU_GATES}
    U = {g: store[f"{prefix}.U{g}"] for g in GRU_GATES}
    b = {g: store[f"{prefix}.b{g}"] for g in GRU_GATES}
    if xs.ndim != 3 or xs.shape[2] != W["z"].shape[0]:
        raise DimensionError(f"gru_sequence expects (T, B, {W['z'].shape[0]}), got {xs.shape}")
    T, B, _ = xs.shape
    H = W["z"].shape[1]
    h0t = as_tensor(np.zeros((B, H)) if h0 is None else h0)
    if h0t.shape != (B, H):
        raise DimensionError(f"h0 shape {h0t.shape} != {(B, H)}")

    x = xs.data
    h = h0t.data
    cache = []
    for t in range(T):
        xt = x[t]
        # same association order as gru_step: (xW + hU) + b
        z = _sigmoid(xt @ W["z"].data + h @ U["z"].data + b["z"].data)
        r = _sigmoid(xt @ W["r"].data + h @ U["r"].data + b["r"].data)
        rh = r * h
        n = np.tanh(xt @ W["n"].data + rh @ U["n"].data + b["n"].data)
        h_new = (-z + 1.0) * n + z * h
        cache.append((h, z, r, rh, n))
        h = h_new

    parents = (xs, h0t, *W.values(), *U.values(), *b.values())

    def backward(g):
        dW = {k: np.zeros_like(v.data) for k, v in W.items()}
        dU = {k: np.zeros_like(v.data) for k, v in U.items()}
        db = {k: np.zeros_like(v.data) for k, v in b.items()}
        dx = np.zeros_like(x)
        dh = g.copy()
        for t in range(T - 1, -1, -1):
            h_prev, z, r, rh, n = cache[t]
            xt = x[t]
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            dh_prev = dh * z
            dan = dn * (1.0 - n * n)
            drh = dan @ U["n"].data.T
            dr = drh * h_prev
            dh_prev += drh * r
            daz = dz * z * (1.0 - z)
            dar = dr * r * (1.0 - r)
            for key, da, hin in (("z", daz, h_prev), ("r", dar, h_prev), ("n", dan, rh)):
                dW[key] += xt.T @ da
                dU[key] += hin.T @ da
                db[key] += da.sum(axis=0)
                dx[t] += da @ W[key].data.T
            dh_prev += daz @ U["z"].data.T + dar @ U["r"].data.T
            dh = dh_prev
        if xs.requires_grad:
            xs._accumulate(dx)
        if h0t.requires_grad:
            h0t._accumulate(dh)
        for key in GRU_GATES:
            if W[key].requires_grad:
                W[key]._accumulate(dW[key])
            if U[key].requires_grad:
                U[key]._accumulate(dU[key])
            if b[key].requires_grad:
                b[key]._accumulate(db[key])

    return _node(h, parents, backward)


# ---------------------------------------------------------------- losses

def cross_entropy(logits, target: int) -> Tensor:
    """-log softmax(logits)[target] for a logit vector."""
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise DimensionError("cross_entropy expects a logit vector")
    if not 0 <= target < logits.shape[0]:
        raise ContractError(f"target {target} out of range")
    return mul(log_softmax_rows(logits)[int(target)], -1.0)


# ---------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, store: ParameterStore, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: float | None = None):
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in store.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in store.items()}

    def step(self) -> None:
        grads = self.store.grads()
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = {k: g * scale for k, g in grads.items()}
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.store.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
