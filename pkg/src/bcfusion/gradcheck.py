"""Finite-difference verification of reverse-mode gradients.

``finite_diff_gradcheck`` compares the tape's gradients for a scalar
function against central differences, parameter by parameter.  The
relative error metric is |g - g_fd| / max(1, |g|, |g_fd|), so tiny
gradients are judged on absolute error and large ones on relative error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradcheckReport:
    """Per-parameter worst relative error between autodiff and central differences."""

    per_param: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_rel_err <= self.tol


def finite_diff_gradcheck(f: Callable[[], Tensor],
                          params: Sequence[tuple[str, Tensor]],
                          h: float = 1e-5,
                          tol: float = 1e-4) -> GradcheckReport:
    """Check d(f)/d(param) for every element of every named parameter.

    ``f`` must be deterministic and return a size-1 tensor built from the
    ``params`` tensors.  One taped evaluation collects the reverse-mode
    gradients; each parameter element is then perturbed in place by +-h for
    the central-difference estimate.  Non-finite values of ``f`` at a
    perturbed point are reported as failures naming the location.
    """
    if h <= 0:
        raise ValueError("gradcheck: h must be positive")
    params = list(params)
    for _, p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f()
    backward(out, tape)
    auto = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
            for name, p in params}

    report = GradcheckReport(tol=tol)
    for name, p in params:
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f().data.item()
            flat[i] = orig - h
            f_minus = f().data.item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                report.failures.append(f"{name}[{i}]: non-finite value at perturbed point")
                continue
            g_fd = (f_plus - f_minus) / (2.0 * h)
            g = auto[name].reshape(-1)[i]
            rel = abs(g - g_fd) / max(1.0, abs(g), abs(g_fd))
            worst = max(worst, rel)
        report.per_param[name] = worst
    return report
