"""Differentiable operations on :class:`~dicycle.tensor.tensor.Tensor`.

Elementwise binary ops accept equal shapes or a 0-d operand only; any other
broadcast has to be spelled out with :func:`broadcast_to` so shape mistakes in
model code fail loudly instead of silently summing gradients.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigurationError, DegenerateInputError, DimensionError
from .tensor import Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of NumPy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(
        f"{op}: incompatible shapes {a.shape} and {b.shape} "
        "(only equal shapes or scalar-with-tensor are supported; use broadcast_to)"
    )


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    return Tensor._from_op(np.where(positive, a.data, 0.0), (a,), lambda g: (g * positive,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def cos(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._from_op(np.cos(x), (a,), lambda g: (-g * np.sin(x),), "cos")


def sin(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._from_op(np.sin(x), (a,), lambda g: (g * np.cos(x),), "sin")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._from_op(np.log(x), (a,), lambda g: (g / x,), "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return Tensor._from_op(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clip")


_UNARY = {"relu": relu, "sigmoid": sigmoid, "cos": cos, "sin": sin, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *inputs, factor: Optional[float] = None) -> Tensor:
    """Dispatch an elementwise op by name (``scale`` takes ``factor``)."""
    if op == "scale":
        if len(inputs) != 1 or factor is None:
            raise ConfigurationError("scale expects one input and a factor")
        return scale(as_tensor(inputs[0]), factor)
    if op in _UNARY:
        if len(inputs) != 1:
            raise ConfigurationError(f"{op} expects one input, got {len(inputs)}")
        return _UNARY[op](as_tensor(inputs[0]))
    if op in _BINARY:
        if len(inputs) != 2:
            raise ConfigurationError(f"{op} expects two inputs, got {len(inputs)}")
        return _BINARY[op](inputs[0], inputs[1])
    raise ConfigurationError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} to {shape}") from exc
    src = a.shape
    return Tensor._from_op(np.array(out), (a,), lambda g: (_unbroadcast(g, src),), "broadcast_to")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(
        a.data.transpose(axes).copy(), (a,), lambda g: (g.transpose(inverse),), "transpose"
    )


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._from_op(np.asarray(out, dtype=np.float64), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from exc
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._from_op(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return Tensor._from_op(out, tensors, backward, "stack")


def take_rows(table: Tensor, index) -> Tensor:
    """Gather rows of a 2-D table: ``out[...] = table[index[...]]``.

    The backward scatter-adds, so repeated indices accumulate.
    """
    index = np.asarray(index, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"take_rows expects a 2-D table, got shape {table.shape}")
    rows = table.shape[0]
    if index.size and (index.min() < 0 or index.max() >= rows):
        raise DimensionError(f"row index out of range [0, {rows}): min={index.min()} max={index.max()}")
    src = table.shape

    def backward(g):
        # scatter-add as one bincount over flattened (row, column) cells
        cells = (index.reshape(-1, 1) * src[1] + np.arange(src[1])).reshape(-1)
        grad = np.bincount(cells, weights=g.reshape(-1), minlength=src[0] * src[1])
        return (grad.reshape(src),)

    return Tensor._from_op(table.data[index], (table,), backward, "take_rows")


def stop_gradient(a: Tensor) -> Tensor:
    return a.detach()


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with NumPy batch semantics on leading dimensions.

    ``dA = dC @ B^T`` and ``dB = A^T @ dC``, summed back over broadcast batch
    axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul batch dimensions incompatible: {a.shape} x {b.shape}") from exc
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2:
            # shared right operand: fold batch axes into rows instead of a batched product
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._from_op(out, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# sequence ops
# ---------------------------------------------------------------------------


def conv1d_depthwise(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 1-D cross-correlation along axis -2 with same-size zero padding.

    ``x`` has shape ``(..., L, d)`` and ``kernel`` has shape ``(n, d)`` with odd
    ``n``; output keeps the shape of ``x``.
    """
    if kernel.ndim != 2:
        raise DimensionError(f"kernel must be (n, d), got {kernel.shape}")
    n, d = kernel.shape
    if n % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {n}")
    if x.ndim < 2 or x.shape[-1] != d:
        raise DimensionError(f"conv1d_depthwise: input {x.shape} does not match kernel {kernel.shape}")
    length = x.shape[-2]
    if length < 1:
        raise DimensionError("conv1d_depthwise: empty sequence")
    pad = (n - 1) // 2
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    k = kernel.data
    out = np.zeros_like(x.data)
    for m in range(n):
        out += xp[..., m : m + length, :] * k[m]

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(k)
        for m in range(n):
            gxp[..., m : m + length, :] += g * k[m]
            gk[m] = (g * xp[..., m : m + length, :]).reshape(-1, d).sum(axis=0)
        return gxp[..., pad : pad + length, :], gk

    return Tensor._from_op(out, (x, kernel), backward, "conv1d_depthwise")


def maxpool_over_length(x: Tensor) -> Tensor:
    """Column-wise max over axis -2; ties route gradient to the first index."""
    if x.ndim < 2:
        raise DimensionError(f"maxpool_over_length expects rank >= 2, got {x.shape}")
    if x.shape[-2] == 0:
        raise DimensionError("maxpool_over_length: empty input")
    idx = np.argmax(x.data, axis=-2)[..., None, :]
    out = np.take_along_axis(x.data, idx, axis=-2)[..., 0, :]
    src = x.shape

    def backward(g):
        grad = np.zeros(src)
        np.put_along_axis(grad, idx, g[..., None, :], axis=-2)
        return (grad,)

    return Tensor._from_op(out, (x,), backward, "maxpool")


def softmax_masked(logits: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Masked positions get exactly zero probability and zero gradient.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise DimensionError(f"mask shape {mask.shape} != logits shape {logits.shape}")
    if not mask.any(axis=-1).all():
        raise DegenerateInputError("softmax_masked: every position of some row is masked")
    z = np.where(mask, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (p * g).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(p, (logits,), backward, "softmax_masked")
