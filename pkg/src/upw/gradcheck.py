"""Finite-difference verification of analytic gradients.

Central differences at a caller-chosen epsilon are compared against the
gradients produced by autodiff, parameter entry by parameter entry. The
reported figure is a relative error with an absolute floor of 1e-3 in
the denominator so near-zero gradient entries are judged on an absolute
scale instead of amplifying roundoff noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor
from .errors import NumericalError, UsageError

REL_FLOOR = 1e-3


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    per_param: dict[str, float]

    def __str__(self) -> str:
        lines = [
            f"{name}: max rel error {err:.3e}" for name, err in sorted(self.per_param.items())
        ]
        lines.append(
            f"worst: {self.worst_param}{list(self.worst_index)} -> {self.max_rel_error:.3e}"
        )
        return "\n".join(lines)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-4,
    entries_per_param: int | None = None,
    rng: np.random.Generator | int = 0,
) -> GradCheckResult:
    """Compare analytic gradients of a scalar loss with central differences.

    loss_fn must recompute the loss from the current contents of params.
    With entries_per_param set, at most that many coordinates of each
    parameter tensor are perturbed (chosen deterministically from rng);
    otherwise every coordinate is checked.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise UsageError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))

    for t in params.values():
        t.grad = None
    loss = loss_fn()
    if loss.size != 1:
        raise UsageError("loss_fn must return a scalar tensor")
    if not np.isfinite(loss.data).all():
        raise NumericalError("loss is not finite at the evaluation point")
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }

    worst = 0.0
    worst_param = ""
    worst_index: tuple[int, ...] = ()
    per_param: dict[str, float] = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.shape[0]
        if entries_per_param is None or n <= entries_per_param:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=entries_per_param, replace=False))
        local_worst = 0.0
        for c in coords:
            saved = flat[c]
            flat[c] = saved + eps
            f_plus = float(loss_fn().data)
            flat[c] = saved - eps
            f_minus = float(loss_fn().data)
            flat[c] = saved
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError(
                    f"non-finite loss while perturbing {name}[{c}]"
                )
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[name].reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            if err > local_worst:
                local_worst = err
            if err > worst:
                worst = err
                worst_param = name
                worst_index = np.unravel_index(c, t.data.shape)
        per_param[name] = local_worst
    return GradCheckResult(
        max_rel_error=worst,
        worst_param=worst_param,
        worst_index=tuple(int(i) for i in worst_index),
        per_param=per_param,
    )
