"""Finite-difference verification of backward()."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import NonFiniteError, Tensor, backward


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple[int, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    # floor keeps near-zero gradients from turning roundoff into huge ratios
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(fn: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        hi, lo = orig + h, orig - h
        flat[i] = hi
        up = fn(Tensor(x)).item()
        flat[i] = lo
        down = fn(Tensor(x)).item()
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteError("grad_check", "perturbed forward")
        # divide by the step actually taken, not the nominal 2h
        gflat[i] = (up - down) / (hi - lo)
    return grad


def analytic_gradient(fn: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    leaf = Tensor(x, requires_grad=True)
    out = fn(leaf)
    backward(out)
    return np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad


def grad_check(
    fn: Callable[[Tensor], Tensor],
    x,
    tolerance: float = 1e-5,
    h: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() against central differences for scalar ``fn`` at ``x``."""
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    analytic = analytic_gradient(fn, x)
    numeric = numeric_gradient(fn, x, h=h)
    err = relative_error(analytic, numeric, floor=floor)
    worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
    return GradCheckReport(float(err.max()) if err.size else 0.0, tuple(int(i) for i in worst), tolerance)
