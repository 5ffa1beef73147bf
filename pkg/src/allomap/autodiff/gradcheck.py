"""Finite-difference verification of reverse-mode gradients.

The checker projects an operation's output onto fixed random weights to get a
scalar, computes analytic gradients through the tape, and compares them with
central differences. Comparisons and the probing reduction run in 64-bit;
the operation under test keeps its normal 32-bit storage.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, mul, reset_tape, tensor, tsum


def _loss_value(out: Tensor, weights: np.ndarray) -> float:
    return float(np.sum(out.data.astype(np.float64) * weights))


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-3,
    rel_tol: float = 1e-3,
    seed: int = 0,
) -> float:
    """Assert analytic == numeric gradient for every input coordinate.

    Returns the worst relative error observed. A coordinate passes when
    |analytic - numeric| <= rel_tol * max(1, |analytic|, |numeric|).
    """
    rng = np.random.default_rng(seed)
    reset_tape()
    out = fn(*inputs)
    weights = rng.uniform(-1.0, 1.0, size=out.shape)
    wt = tensor(weights.astype(np.float32))
    loss = tsum(mul(out, wt))
    for t in inputs:
        t.grad = None
    backward(loss)
    # Reuse the identical float64 weights for the numeric probes.
    weights64 = wt.data.astype(np.float64)

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = np.float32(orig + step)
            reset_tape()
            hi = _loss_value(fn(*inputs), weights64)
            flat[i] = np.float32(orig - step)
            reset_tape()
            lo = _loss_value(fn(*inputs), weights64)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric)
            denom = max(1.0, abs(a), abs(numeric))
            worst = max(worst, err / denom)
            if err > rel_tol * denom:
                raise AssertionError(
                    f"gradient mismatch at tensor shape {t.shape} coord {i}: "
                    f"analytic {a:.6g} vs numeric {numeric:.6g}"
                )
    reset_tape()
    return worst
