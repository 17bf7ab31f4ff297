"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractError, NumericalProbeError
from .tensor import Tensor, backward, no_grad

#: below this magnitude on both sides the comparison falls back to absolute error
SMALL_MAGNITUDE = 1e-6


@dataclass
class GradientReport:
    max_rel_error: float
    max_abs_error: float
    passed: bool
    checked: int
    worst: tuple | None = None  # (input position, flat element index)
    tol: float = 0.0
    errors: list = field(default_factory=list, repr=False)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} rel={self.max_rel_error:.3e} abs={self.max_abs_error:.3e} "
                f"checked={self.checked} worst={self.worst} tol={self.tol:g}")


def _scalarize(out) -> Tensor:
    return out if out.size == 1 else out.sum()


def analytic_gradients(op: Callable, inputs: Sequence[Tensor]) -> list[np.ndarray]:
    leaves = [Tensor(x.data.copy(), requires_grad=True) for x in inputs]
    loss = _scalarize(op(*leaves))
    backward(loss)
    return [np.zeros_like(x.data) if x.grad is None else x.grad for x in leaves]


def _probe(op, arrays, which, flat, eps):
    base = arrays[which]
    orig = base.flat[flat]
    with no_grad():
        base.flat[flat] = orig + eps
        plus = op(*[Tensor(a) for a in arrays]).data
        base.flat[flat] = orig - eps
        minus = op(*[Tensor(a) for a in arrays]).data
    base.flat[flat] = orig
    # differencing before summing keeps untouched outputs exactly cancelled
    value = float(np.sum(plus - minus)) / (2.0 * eps)
    if not np.isfinite(value):
        raise NumericalProbeError(
            f"finite-difference probe is not finite at input {which}, element {flat}",
            index=(which, flat))
    return value


def check_gradient(op: Callable, inputs: Sequence, eps: float = 1e-5, tol: float = 1e-4,
                   wrt: Sequence[int] | None = None, samples: int | None = None,
                   seed: int = 0) -> GradientReport:
    """Compare ``op``'s analytic gradient with central differences.

    The output of ``op`` is reduced to a scalar by summation. Each element's
    error is relative (``|a - n| / max(|a|, |n|)``) unless both magnitudes are
    below 1e-6, where the absolute difference is used. ``samples`` limits the
    probe to that many randomly chosen elements per input, which keeps whole
    network checks affordable.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    tensors = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    for i, t in enumerate(tensors):
        if not np.all(np.isfinite(t.data)):
            raise ContractError(f"input {i} contains non-finite values")
    grads = analytic_gradients(op, tensors)
    arrays = [t.data.copy() for t in tensors]
    positions = range(len(arrays)) if wrt is None else wrt
    rng = np.random.default_rng(seed)

    worst_err, worst_abs, worst_at, checked = 0.0, 0.0, None, 0
    errors = []
    for which in positions:
        n = arrays[which].size
        if samples is not None and samples < n:
            elements = np.sort(rng.choice(n, size=samples, replace=False))
        else:
            elements = range(n)
        for flat in elements:
            numeric = _probe(op, arrays, which, int(flat), eps)
            analytic = float(grads[which].flat[flat])
            diff = abs(analytic - numeric)
            scale_ = max(abs(analytic), abs(numeric))
            err = diff if scale_ < SMALL_MAGNITUDE else diff / scale_
            errors.append(err)
            checked += 1
            worst_abs = max(worst_abs, diff)
            if worst_at is None or err > worst_err:
                worst_err, worst_at = err, (which, int(flat))
    return GradientReport(worst_err, worst_abs, worst_err <= tol, checked, worst_at, tol, errors)


def directional_derivative(op: Callable, inputs: Sequence, direction: Sequence,
                           eps: float = 1e-5) -> tuple[float, float]:
    """Return (analytic, central-difference) derivatives of sum(op) along ``direction``."""
    tensors = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    dirs = [np.asarray(d, dtype=np.float64) for d in direction]
    grads = analytic_gradients(op, tensors)
    analytic = float(sum(np.sum(g * d) for g, d in zip(grads, dirs)))
    with no_grad():
        plus = op(*[Tensor(t.data + eps * d) for t, d in zip(tensors, dirs)]).data
        minus = op(*[Tensor(t.data - eps * d) for t, d in zip(tensors, dirs)]).data
    numeric = float(np.sum(plus - minus)) / (2.0 * eps)
    return analytic, numeric


def one_sided_derivative(op: Callable, inputs: Sequence, direction: Sequence,
                         eps: float = 1e-6) -> float:
    """Forward difference of sum(op) along ``direction``; used at kinks."""
    tensors = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    dirs = [np.asarray(d, dtype=np.float64) for d in direction]
    with no_grad():
        plus = op(*[Tensor(t.data + eps * d) for t, d in zip(tensors, dirs)]).data
        base = op(*[Tensor(t.data) for t in tensors]).data
    return float(np.sum(plus - base)) / eps
