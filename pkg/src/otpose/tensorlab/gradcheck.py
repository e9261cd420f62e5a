"""Central-difference verification of analytic gradients.

The checked quantity is always the sum of the operation outputs, so every
operation reduces to a scalar and the comparison is per input entry:

    err = |analytic - (f(x+h) - f(x-h)) / 2h| / max(1, |analytic|)

At float64 with h = 1e-5 a correct implementation lands well below 1e-6 for
smooth operations and exactly at roundoff for linear ones.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .tensor import GradCheckError, Parameter, Tensor


def _as_scalar(result) -> Tensor:
    out = result[0] if isinstance(result, tuple) else result
    if not isinstance(out, Tensor):
        raise GradCheckError("op under check must return a Tensor")
    return out.sum() if out.data.shape != () else out


def _entries(n: int, limit: Optional[int],
             rng: Optional[np.random.Generator]) -> Iterable[int]:
    if limit is not None and n > limit:
        gen = rng if rng is not None else np.random.default_rng(0)
        return gen.choice(n, size=limit, replace=False)
    return range(n)


def finite_diff_check(op: Callable[..., object], inputs: Sequence[Tensor],
                      h: float = 1e-5, *,
                      params: Sequence[Parameter] = (),
                      max_entries_per_input: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``op`` is called as ``op(*inputs)`` and may return a tensor or a tuple
    whose first element is the tensor of interest.  Inputs are float64 leaf
    tensors created with ``requires_grad=True``; ``params`` lists Parameters
    the op reads implicitly (their values are perturbed in place and their
    ``.grad`` provides the analytic side, so whole models can be checked
    end to end).  When ``max_entries_per_input`` is set, only a deterministic
    random subset of entries per input is perturbed; the analytic gradient is
    still computed in full.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise GradCheckError("finite differences need float64 inputs")
        if not t.requires_grad:
            raise GradCheckError("all checked inputs must require gradients")
    for p in params:
        if p.value.dtype != np.float64:
            raise GradCheckError("finite differences need float64 parameters")
        p.zero_grad()

    leaf_grads = _as_scalar(op(*inputs)).backward()
    analytic: list[np.ndarray] = []
    for t in inputs:
        g = leaf_grads.get(id(t))
        if g is None:
            raise GradCheckError("op did not propagate a gradient to an input")
        analytic.append(g)
    for p in params:
        analytic.append(p.grad.copy())
    for g in analytic:
        if not np.isfinite(g).all():
            raise GradCheckError("analytic gradient is not finite")

    base = [t.data.copy() for t in inputs]

    def eval_sum() -> float:
        leaves = [Tensor(a.copy(), requires_grad=True) for a in base]
        return float(_as_scalar(op(*leaves)).data)

    worst = 0.0
    buffers = base + [p.value for p in params]
    for i, arr in enumerate(buffers):
        flat = arr.reshape(-1)
        ga = analytic[i].reshape(-1)
        for j in _entries(arr.size, max_entries_per_input, rng):
            keep = flat[j]
            flat[j] = keep + h
            fp = eval_sum()
            flat[j] = keep - h
            fm = eval_sum()
            flat[j] = keep
            numeric = (fp - fm) / (2.0 * h)
            err = abs(ga[j] - numeric) / max(1.0, abs(ga[j]))
            worst = max(worst, err)
    return worst
