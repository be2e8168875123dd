"""DiCycle network, its ablations and the LR / DNN / DIN-style baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .. import tensor as T
from ..attention import GateStats, TimeCycleAttention, apply_filter, gated_weights, interest_attention
from ..data.samples import Batch, Sample, collate
from ..errors import ConfigurationError, DataError
from ..tensor import Tensor, no_grad
from ..time_encoding import DEFAULT_GRANULARITIES, HOUR, AbsoluteTimeEncoder, RelativeTimeEncoder


class Variant(str, Enum):
    DICYCLE = "DiCycle"
    NO_ABSOLUTE_TIME = "NoAbsoluteTime"
    NO_RELATIVE_TIME = "NoRelativeTime"
    NO_TIME_CYCLE_MODULE = "NoTimeCycleModule"
    DIN_STYLE = "DIN_style"
    DNN = "DNN"
    LR = "LR"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        for v in cls:
            if v.value.lower() == str(value).lower():
                return v
        raise ConfigurationError(f"unknown variant {value!r}; choose from {[v.value for v in cls]}")


ABLATIONS = (Variant.DICYCLE, Variant.NO_ABSOLUTE_TIME, Variant.NO_RELATIVE_TIME, Variant.NO_TIME_CYCLE_MODULE)

_USES_ABSOLUTE = {Variant.DICYCLE, Variant.NO_RELATIVE_TIME, Variant.NO_TIME_CYCLE_MODULE}
_USES_RELATIVE = {Variant.DICYCLE, Variant.NO_ABSOLUTE_TIME, Variant.NO_TIME_CYCLE_MODULE}
_USES_TIME_CYCLE = {Variant.DICYCLE, Variant.NO_ABSOLUTE_TIME, Variant.NO_RELATIVE_TIME}

# independent RNG stream per component so removing one leaves the others' init unchanged
_STREAM = {"items": 1, "abs": 2, "rel": 3, "tca": 4, "head": 5, "lr": 6}


@dataclass
class ModelConfig:
    d: int = 16
    max_len: int = 50
    delta_thred: float = 0.6
    granularities: Sequence[str] = DEFAULT_GRANULARITIES
    J: int = 2
    kernel_size: int = 3
    include_j0: bool = False
    time_unit_seconds: float = HOUR
    timezone: str = "UTC"
    strict_mask: bool = False
    hidden: Sequence[int] = (128, 64)

    def __post_init__(self):
        if self.d < 2 or self.d % 2:
            raise ConfigurationError(f"d must be an even integer >= 2, got {self.d}")
        if not 0.0 <= self.delta_thred <= 1.0:
            raise ConfigurationError(f"delta_thred must lie in [0, 1], got {self.delta_thred}")
        if self.max_len < 1:
            raise ConfigurationError(f"max_len must be >= 1, got {self.max_len}")


@dataclass
class ForwardOutput:
    probs: Tensor
    logits: Tensor
    gate: Optional[np.ndarray] = None


def _rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), _STREAM[component]])


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


def _masked(x: Tensor, keep: np.ndarray) -> Tensor:
    """Multiply rows of ``x`` (leading axes matching ``keep``) by a 0/1 constant."""
    keep = keep.astype(np.float64).reshape(keep.shape + (1,) * (x.ndim - keep.ndim))
    return T.mul(x, T.broadcast_to(Tensor(keep), x.shape))


class CTRModel:
    """Click-probability model over (behavior sequence, target item, target time).

    Parameters
    ----------
    n_items : int
        Size of the item vocabulary; the embedding table gets one extra
        padding row at index 0.
    config : ModelConfig
    variant : Variant or str
    seed : int
        Seeds every parameter initialisation.
    """

    def __init__(self, n_items: int, config: Optional[ModelConfig] = None,
                 variant: Variant | str = Variant.DICYCLE, seed: int = 0):
        self.config = config or ModelConfig()
        self.variant = Variant.parse(variant)
        self.n_items = int(n_items)
        self.seed = int(seed)
        self.gate_stats = GateStats()
        cfg, d = self.config, self.config.d

        self.abs_encoder = self.rel_encoder = self.attention = None
        self.head: list[tuple[Tensor, Tensor]] = []
        self._params: dict[str, Tensor] = {}

        if self.variant is Variant.LR:
            rng = _rng(seed, "lr")
            self._add(Tensor(rng.normal(0.0, 0.01, (n_items + 1, 1)), requires_grad=True, name="lr.w_target"))
            self._add(Tensor(rng.normal(0.0, 0.01, (n_items + 1, 1)), requires_grad=True, name="lr.w_behavior"))
            self._add(Tensor(np.zeros(1), requires_grad=True, name="lr.bias"))
            self._params["lr.w_target"].data[0] = 0.0
            self._params["lr.w_behavior"].data[0] = 0.0
            return

        table = _rng(seed, "items").uniform(-1.0 / math.sqrt(d), 1.0 / math.sqrt(d), (n_items + 1, d))
        table[0] = 0.0
        self._add(Tensor(table, requires_grad=True, name="item_embedding"))

        if self.variant in _USES_ABSOLUTE:
            self.abs_encoder = AbsoluteTimeEncoder(
                d, cfg.granularities, cfg.J, cfg.kernel_size, cfg.include_j0, cfg.timezone, rng=_rng(seed, "abs")
            )
            self._params.update(self.abs_encoder.parameters())
        if self.variant in _USES_RELATIVE:
            self.rel_encoder = RelativeTimeEncoder(
                d, cfg.time_unit_seconds, seed=_rng(seed, "rel").integers(2**32)
            )
            self._params.update(self.rel_encoder.parameters())
        if self.variant in _USES_TIME_CYCLE:
            self.attention = TimeCycleAttention(d, rng=_rng(seed, "tca"))
            self._params.update(self.attention.parameters())

        widths = [self.head_input_width, *cfg.hidden, 1]
        rng = _rng(seed, "head")
        for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            w = self._add(Tensor(_glorot(rng, fan_in, fan_out), requires_grad=True, name=f"head.W{layer}"))
            b = self._add(Tensor(np.zeros(fan_out), requires_grad=True, name=f"head.b{layer}"))
            self.head.append((w, b))

    # -- parameters -----------------------------------------------------------

    def _add(self, t: Tensor) -> Tensor:
        if t.name in self._params:
            raise ConfigurationError(f"duplicate parameter name {t.name!r}")
        self._params[t.name] = t
        return t

    def parameters(self) -> dict[str, Tensor]:
        return dict(sorted(self._params.items()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, arrays) -> None:
        T.restore_into(self._params, arrays)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    @property
    def head_input_width(self) -> int:
        d = self.config.d
        if self.variant in _USES_TIME_CYCLE or self.variant is Variant.DNN:
            return 2 * d
        return d

    # -- forward --------------------------------------------------------------

    def _check_items(self, batch: Batch) -> None:
        limit = self.n_items
        bad_rows = np.flatnonzero(
            (batch.items < 0).any(axis=1) | (batch.items > limit).any(axis=1)
            | (batch.target_item < 1) | (batch.target_item > limit)
        )
        if bad_rows.size:
            row = int(bad_rows[0])
            raise DataError(
                f"sample {row} (user {int(batch.user[row])}) references an item id outside [1, {limit}]: "
                f"target={int(batch.target_item[row])}, behaviors={batch.items[row][batch.mask[row]].tolist()}"
            )

    def time_embeddings(self, batch: Batch) -> tuple[Optional[Tensor], Optional[Tensor]]:
        """``q_k = Phi(t - t_k) + Lambda(t_k)`` and ``q_a = Phi(0) + Lambda(t)`` for enabled encoders."""
        q_k = q_a = None
        if self.rel_encoder is not None:
            q_k = self.rel_encoder.encode(batch.target_time[:, None] - batch.times)
            q_a = self.rel_encoder.encode(np.zeros_like(batch.target_time))
        if self.abs_encoder is not None:
            lam_k = self.abs_encoder.encode(batch.times)
            lam_a = self.abs_encoder.encode(batch.target_time)
            q_k = lam_k if q_k is None else q_k + lam_k
            q_a = lam_a if q_a is None else q_a + lam_a
        return q_k, q_a

    def _head(self, x: Tensor) -> Tensor:
        for layer, (w, b) in enumerate(self.head):
            x = T.matmul(x, w)
            x = x + T.broadcast_to(b, x.shape)
            if layer < len(self.head) - 1:
                x = T.relu(x)
        return T.reshape(x, (x.shape[0],))

    def _lr_logits(self, batch: Batch) -> Tensor:
        p = self._params
        target = T.reshape(T.take_rows(p["lr.w_target"], batch.target_item), (len(batch),))
        weights = batch.mask / np.maximum(batch.mask.sum(axis=1, keepdims=True), 1)
        hist = T.reshape(T.take_rows(p["lr.w_behavior"], batch.items), batch.items.shape)
        pooled = T.sum(T.mul(hist, Tensor(weights)), axis=1)
        return target + pooled + T.broadcast_to(p["lr.bias"], (len(batch),))

    def forward(self, batch: Batch) -> ForwardOutput:
        if len(batch) == 0:
            raise DataError("forward() called with an empty batch")
        self._check_items(batch)
        if self.variant is Variant.LR:
            logits = self._lr_logits(batch)
            return ForwardOutput(T.sigmoid(logits), logits)

        cfg = self.config
        table = self._params["item_embedding"]
        mask = batch.mask
        e_k = T.take_rows(table, batch.items)
        e_a = T.take_rows(table, batch.target_item)

        if self.variant is Variant.DNN:
            pooled = T.sum(_masked(e_k, mask), axis=1)
            logits = self._head(T.concat([pooled, e_a], axis=-1))
            return ForwardOutput(T.sigmoid(logits), logits)

        has_history = mask.any(axis=1)
        # rows with no behaviors attend over padding and are zeroed afterwards
        safe_mask = mask.copy()
        safe_mask[~has_history, -1] = True

        if self.variant is Variant.DIN_STYLE:
            r_k, r_a = e_k, e_a
            q_k = q_a = None
        else:
            q_k, q_a = self.time_embeddings(batch)
            r_k, r_a = e_k + q_k, e_a + q_a

        r = interest_attention(r_a, r_k, safe_mask)
        if not has_history.all():
            r = _masked(r, has_history)

        gate = None
        if self.attention is not None:
            gate_t = gated_weights(e_a, e_k, cfg.delta_thred, mask=mask, stats=self.gate_stats)
            gate = gate_t.data
            q_tilde = apply_filter(gate_t, q_k)
            h = self.attention(q_a, q_tilde, safe_mask, gate=gate, strict_mask=cfg.strict_mask)
            if not has_history.all():
                h = _masked(h, has_history)
            features = T.concat([r, h], axis=-1)
        else:
            features = r

        logits = self._head(features)
        return ForwardOutput(T.sigmoid(logits), logits, gate)

    __call__ = forward

    def predict(self, samples: Sequence[Sample] | Batch, batch_size: int = 1024) -> np.ndarray:
        """Click probabilities without recording a graph."""
        if isinstance(samples, Batch):
            with no_grad():
                return self.forward(samples).probs.data.copy()
        out = []
        with no_grad():
            for start in range(0, len(samples), batch_size):
                batch = collate(samples[start : start + batch_size], self.config.max_len)
                out.append(self.forward(batch).probs.data)
        return np.concatenate(out) if out else np.zeros(0)


def cross_entropy_loss(probs: Tensor, labels, eps: float = 1e-12) -> tuple[Tensor, Tensor]:
    """Binary cross-entropy summed over the batch, plus the batch mean.

    Probabilities are clamped to ``[eps, 1 - eps]`` before the logs.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != probs.shape:
        raise DataError(f"labels shape {labels.shape} != probabilities shape {probs.shape}")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise DataError("labels must be 0 or 1")
    p = T.clip(probs, eps, 1.0 - eps)
    y = Tensor(labels)
    ll = T.mul(y, T.log(p)) + T.mul(Tensor(1.0 - labels), T.log(T.sub(1.0, p)))
    total = T.scale(T.sum(ll), -1.0)
    return total, T.scale(total, 1.0 / labels.size)


def probe_timestamp_sweep(model: CTRModel, sample: Sample, horizon_hours: int,
                          step_seconds: int = 3600) -> list[tuple[int, float]]:
    """Score one (behaviors, item) pair at ``target_time + k * step`` for ``k = 0..horizon``."""
    if horizon_hours < 0:
        raise ConfigurationError("horizon must be non-negative")
    steps = np.arange(horizon_hours + 1, dtype=np.int64) * int(step_seconds)
    shifted = [
        Sample(sample.user, sample.behavior_items, sample.behavior_times, sample.target_item,
               int(sample.target_time + off), sample.label)
        for off in steps
    ]
    scores = model.predict(shifted)
    return [(int(off), float(s)) for off, s in zip(steps, scores)]
