"""Dense float64 tensor with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a NumPy ``float64`` array.  Tensors produced by a
differentiable op keep references to their parents and a closure mapping the
upstream gradient to one gradient per parent.  :func:`backward` walks that
graph once in reverse topological order.

Graph recording can be switched off with :func:`no_grad`; the flag lives in a
``ContextVar`` so independent runs in different threads never interfere.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import ContractError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "dicycle_grad_enabled", default=True
)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference only)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class Tensor:
    """A float64 array that can take part in a compute graph.

    Parameters
    ----------
    data : array_like
        Values; always converted to a C-contiguous ``float64`` array.
    requires_grad : bool
        Whether :func:`backward` should populate ``grad`` for this tensor.
    name : str, optional
        Label used in error messages and checkpoints.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Optional[BackwardFn] = None
        self._op = "leaf"

    # -- graph construction -------------------------------------------------

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward_fn: BackwardFn,
        op: str,
    ) -> "Tensor":
        out = cls(data)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
            out._op = op
        return out

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- operator sugar (implemented in ops) ---------------------------------

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(value) -> Tensor:
    """Wrap non-tensors as constant (non-differentiable) tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def topological_order(root: Tensor) -> list[Tensor]:
    """Return graph nodes reachable from ``root``, inputs before outputs.

    Only tensors with ``requires_grad`` are visited; iterative DFS so deep
    graphs do not hit the recursion limit.
    """
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` tensor reachable from ``loss``.

    Raises
    ------
    ContractError
        If ``loss`` is not a scalar, or if any reachable tensor already holds a
        gradient (call ``zero_grad`` on parameters between steps).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order = topological_order(loss)
    stale = [t for t in order if t.grad is not None]
    if stale:
        names = ", ".join(repr(t.name or t._op) for t in stale[:5])
        raise ContractError(
            f"gradients already present on {len(stale)} tensor(s) ({names}); "
            "reset them with zero_grad() before calling backward() again"
        )

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            g = np.zeros_like(node.data)
        node.grad = g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
