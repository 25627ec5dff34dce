"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy.differentiate import derivative

from .autograd import Tensor, backward

# |a - n| / max(|a|, |n|, FLOOR * max(1, |loss|)): below that both sides are numerical
# zero.  Roundoff in the loss grows with its magnitude, so the floor does too.
REL_FLOOR = 1e-7


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: str
    n_checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(loss_fn: Callable[[], Tensor], tensors: dict[str, Tensor], step: float = 1e-2,
                    max_per_tensor: int | None = None, rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare backward() against numerical derivatives for entries of ``tensors``.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of every
    tensor on each call.  With ``max_per_tensor`` a random subset of entries
    is probed per tensor.

    The numerical side is adaptive Richardson extrapolation over central
    differences shrinking from ``step``.  Successive estimates are compared
    with each other (never with the analytic value), so the step settles
    between the roundoff regime and the ReLU kinks.
    """
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    backward(loss)
    floor = REL_FLOOR * max(1.0, abs(float(loss.data)))
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in tensors.items()}
    worst, worst_name, n = 0.0, "", 0
    for name, t in tensors.items():
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        idx: Iterable[int] = range(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_per_tensor, replace=False)
        for i in idx:
            orig = flat[i]

            def along(x):
                out = np.empty(np.shape(x))
                for j, xj in np.ndenumerate(x):
                    flat[i] = xj
                    out[j] = float(loss_fn().data)
                flat[i] = orig
                return out

            res = derivative(along, orig, initial_step=step, step_factor=2.0, order=4, maxiter=8,
                             tolerances={"rtol": 1e-8, "atol": 1e-13})
            num = float(res.df)
            err = float(relative_error(np.array(analytic[name].reshape(-1)[i]), np.array(num), floor))
            n += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradCheckResult(worst, worst_name, n)
