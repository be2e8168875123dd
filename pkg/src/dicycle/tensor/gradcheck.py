"""Central finite-difference gradient checking.

The numerical side only ever evaluates the forward function, so it is
independent of the backward rules it validates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


@dataclass
class GradCheckResult:
    name: str
    max_abs_err: float
    max_rel_err: float
    passed: bool


def check_gradients(
    forward: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    rtol: float = 1e-4,
    atol: float = 1e-6,
    eps: float = 1e-6,
) -> list[GradCheckResult]:
    """Compare backward() gradients of a scalar ``forward()`` against finite differences.

    An element passes when ``|analytic - numeric| <= atol + rtol * |numeric|``.
    """
    if not isinstance(params, Mapping):
        params = {f"arg{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    loss = forward()
    loss.backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy() for k, p in params.items()}
    for p in params.values():
        p.grad = None

    def value() -> float:
        with no_grad():
            return forward().item()

    results = []
    for name, p in params.items():
        numeric = numerical_gradient(value, p.data, eps)
        diff = np.abs(analytic[name] - numeric)
        rel = diff / np.maximum(np.abs(numeric), 1e-12)
        passed = bool(np.all(diff <= atol + rtol * np.abs(numeric)))
        results.append(GradCheckResult(name, float(diff.max(initial=0.0)), float(rel.max(initial=0.0)), passed))
    return results
