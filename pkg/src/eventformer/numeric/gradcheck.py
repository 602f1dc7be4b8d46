"""Central-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .module import Module
from .tensor import Parameter, Tensor


class NondeterministicError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    tolerance: float
    per_parameter: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max(self.per_parameter.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_err:.3e} tol={self.tolerance:g} params={len(self.per_parameter)}"


def _named(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Module):
        return list(params.named_parameters())
    if isinstance(params, dict):
        return list(params.items())
    out = []
    for i, p in enumerate(params):
        if isinstance(p, tuple):
            out.append(p)
        else:
            out.append((p.name or f"param{i}", p))
    return out


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, step: float) -> np.ndarray:
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(fn().data)
        flat[i] = orig - step
        down = float(fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def grad_check(
    fn: Callable[[], Tensor],
    params: Module | Iterable[Parameter] | dict,
    tolerance: float = 1e-3,
    step: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare backward() against central differences for each parameter.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``;
    the report keeps the per-parameter maximum.  ``max_entries`` subsamples
    large parameters (entries chosen by ``rng``).
    """
    named = _named(params)
    first = float(fn().data)
    second = float(fn().data)
    if first != second:
        raise NondeterministicError(
            f"nondeterministic fragment: two evaluations gave {first!r} and {second!r}"
        )

    for _, p in named:
        p.grad = None
    loss = fn()
    loss.backward()
    report = GradCheckReport(tolerance=tolerance)
    rng = rng or np.random.default_rng(0)
    for name, p in named:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn().data)
            flat[i] = orig - step
            down = float(fn().data)
            flat[i] = orig
            num = (up - down) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
        report.per_parameter[name] = worst
    return report
