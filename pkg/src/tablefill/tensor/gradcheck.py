"""Central-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .engine import Tensor, no_grad


class GradCheckError(FloatingPointError):
    """Raised when the function or its gradient is not finite."""


def finite_diff_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], h: float = 1e-5,
                      max_entries: int | None = None, seed: int = 0) -> float:
    """Largest elementwise relative error between tape and numeric gradients.

    ``f(*xs)`` must return a scalar tensor.  The error of each entry is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.  With
    ``max_entries`` only a seeded random subset of each input is probed.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    y = f(*xs)
    if y.size != 1:
        raise ValueError(f"finite_diff_check needs a scalar function, got shape {y.shape}")
    if not np.isfinite(y.data).all():
        raise GradCheckError(f"function value is not finite: {y.data}")
    y.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t in xs:
            analytic = t.grad.copy()
            if not np.isfinite(analytic).all():
                raise GradCheckError("analytic gradient is not finite")
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = f(*xs).item()
                flat[i] = orig - h
                fm = f(*xs).item()
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                if not np.isfinite(num):
                    raise GradCheckError(f"numeric gradient not finite at entry {i}")
                a = analytic.reshape(-1)[i]
                worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst
