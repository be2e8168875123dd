"""Gated similarity filter, projected time-cycle attention and target attention.

All functions accept either a single example (``q_a: (d,)``, ``seq: (l, d)``)
or a batch (``(B, d)`` and ``(B, l, d)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

# rounding guard so sim(e, e) passes a threshold of exactly 1
_GATE_SLACK = 1e-12


@dataclass
class GateStats:
    """Diagnostic counters collected by :func:`gated_weights`."""

    zero_norm: int = 0
    evaluated: int = 0
    kept: int = 0


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def gated_weights(e_a, behavior_items, delta_thred: float, mask=None,
                  stats: Optional[GateStats] = None) -> Tensor:
    """Thresholded cosine similarity between the target item and each behavior item.

    ``sim = (1 + cos) / 2`` is kept where it reaches ``delta_thred`` and zeroed
    elsewhere.  The result is a constant tensor: no gradient flows back into
    the embeddings through the gate.  A zero-norm embedding yields ``sim = 0.5``
    and is counted in ``stats.zero_norm``.  Positions where ``mask`` is false
    get weight 0.
    """
    if not 0.0 <= delta_thred <= 1.0:
        raise ConfigurationError(f"delta_thred must lie in [0, 1], got {delta_thred}")
    ea = _data(e_a)
    ek = _data(behavior_items)
    if ek.ndim != ea.ndim + 1 or ek.shape[:-2] != ea.shape[:-1] or ek.shape[-1] != ea.shape[-1]:
        raise DimensionError(f"gated_weights: target {ea.shape} incompatible with behaviors {ek.shape}")
    mask = np.ones(ek.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)

    dots = np.einsum("...ld,...d->...l", ek, ea)
    norms = np.linalg.norm(ek, axis=-1) * np.linalg.norm(ea, axis=-1)[..., None]
    degenerate = norms == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = np.clip(dots / np.where(degenerate, 1.0, norms), -1.0, 1.0)
    sim = np.where(degenerate, 0.5, (1.0 + cosine) / 2.0)
    keep = (sim >= delta_thred - _GATE_SLACK) & mask
    weights = np.where(keep, sim, 0.0)
    if stats is not None:
        stats.zero_norm += int((degenerate & mask).sum())
        stats.evaluated += int(mask.sum())
        stats.kept += int(keep.sum())
    return Tensor(weights)


def apply_filter(f, q: Tensor) -> Tensor:
    """Scale row ``k`` of ``q`` by ``f[k]``; rows with zero weight become exactly zero."""
    f = f if isinstance(f, Tensor) else Tensor(f)
    if f.shape != q.shape[:-1]:
        raise DimensionError(f"apply_filter: weights {f.shape} do not match rows of {q.shape}")
    return T.mul(q, T.broadcast_to(T.reshape(f, f.shape + (1,)), q.shape))


def _batched(query: Tensor, seq: Tensor, pad_mask):
    single = query.ndim == 1
    if single:
        query = T.reshape(query, (1,) + query.shape)
        seq = T.reshape(seq, (1,) + seq.shape)
    if seq.ndim != 3 or query.shape[0] != seq.shape[0] or query.shape[-1] != seq.shape[-1]:
        raise DimensionError(f"attention: query {query.shape} incompatible with sequence {seq.shape}")
    if pad_mask is None:
        pad_mask = np.ones(seq.shape[:2], dtype=bool)
    pad_mask = np.asarray(pad_mask, dtype=bool).reshape(seq.shape[:2])
    return single, query, seq, pad_mask


def _attend(query: Tensor, keys: Tensor, values: Tensor, mask: np.ndarray) -> Tensor:
    b, l, d = keys.shape
    logits = T.reshape(T.matmul(keys, T.reshape(query, (b, d, 1))), (b, l))
    alpha = T.softmax_masked(T.scale(logits, 1.0 / math.sqrt(d)), mask)
    return T.reshape(T.matmul(T.reshape(alpha, (b, 1, l)), values), (b, values.shape[-1]))


class TimeCycleAttention:
    """Scaled dot-product attention with learned ``W_Q``, ``W_K``, ``W_V`` (each ``d x d``)."""

    def __init__(self, d: int, rng: Optional[np.random.Generator] = None, prefix: str = "tca"):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(d)
        self.d = d
        self.W_Q = Tensor(rng.uniform(-bound, bound, (d, d)), requires_grad=True, name=f"{prefix}.W_Q")
        self.W_K = Tensor(rng.uniform(-bound, bound, (d, d)), requires_grad=True, name=f"{prefix}.W_K")
        self.W_V = Tensor(rng.uniform(-bound, bound, (d, d)), requires_grad=True, name=f"{prefix}.W_V")

    def parameters(self) -> dict[str, Tensor]:
        return {w.name: w for w in (self.W_Q, self.W_K, self.W_V)}

    def __call__(self, q_a: Tensor, q_tilde: Tensor, pad_mask=None, gate=None, strict_mask: bool = False) -> Tensor:
        return time_cycle_attention(self, q_a, q_tilde, pad_mask, gate=gate, strict_mask=strict_mask)


def time_cycle_attention(att: TimeCycleAttention, q_a: Tensor, q_tilde: Tensor, pad_mask=None,
                         gate=None, strict_mask: bool = False) -> Tensor:
    """``h = sum_k softmax_k(q_a W_Q (q~_k W_K)^T / sqrt(d)) q~_k W_V``.

    Padded positions are excluded from the softmax.  Positions zeroed by the
    gate stay in (logit 0) unless ``strict_mask`` is set, in which case they
    are excluded too; a row whose every position was filtered then falls back
    to the padding mask, which yields ``h = 0`` because all its values are zero.
    """
    single, q_a, q_tilde, mask = _batched(q_a, q_tilde, pad_mask)
    if strict_mask and gate is not None:
        survivors = mask & (np.asarray(_data(gate)).reshape(mask.shape) > 0)
        rows = survivors.any(axis=-1, keepdims=True)
        mask = np.where(rows, survivors, mask)
    query = T.matmul(q_a, att.W_Q)
    keys = T.matmul(q_tilde, att.W_K)
    values = T.matmul(q_tilde, att.W_V)
    h = _attend(query, keys, values, mask)
    return T.reshape(h, h.shape[1:]) if single else h


def interest_attention(r_a: Tensor, r: Tensor, pad_mask=None) -> Tensor:
    """Target attention without projections: ``sum_k softmax_k(r_a . r_k / sqrt(d)) r_k``."""
    single, r_a, r, mask = _batched(r_a, r, pad_mask)
    out = _attend(r_a, r, r, mask)
    return T.reshape(out, out.shape[1:]) if single else out
