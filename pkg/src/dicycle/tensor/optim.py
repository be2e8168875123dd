"""Adam with bias correction over a name -> Tensor parameter mapping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    lr_scale: Optional[Mapping[str, float]] = None,
) -> None:
    """Update ``params`` in place and advance ``state.t`` by one.

    A missing or ``None`` gradient counts as zero (the parameter was not
    reachable from the loss this step); moments still decay.  ``lr_scale``
    multiplies the step of the named parameters (default 1).
    """
    lr_scale = lr_scale or {}
    for name, p in params.items():
        if name not in state.m or state.m[name].shape != p.shape:
            raise ContractError(f"optimizer state for {name!r} does not match parameter shape {p.shape}")
        g = grads.get(name)
        if g is not None and np.shape(g) != p.shape:
            raise ContractError(f"gradient for {name!r} has shape {np.shape(g)}, parameter has {p.shape}")

    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = 0.0
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * np.square(g)
        p.data = p.data - lr * lr_scale.get(name, 1.0) * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    """Stateful wrapper reading ``.grad`` from each parameter."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 lr_scale: Optional[Mapping[str, float]] = None):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.lr_scale = dict(lr_scale or {})
        self.state = AdamState.for_params(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps, self.lr_scale)
