"""Absolute (calendar-slot) and relative (interval) time representations.

The absolute encoder embeds calendar slots per granularity, convolves a
window of neighbouring slots and max-pools it; the relative encoder is a
sinusoidal map whose inner products depend only on the time difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor

HOUR = 3600
DAY = 86400
# 1970-01-01 was a Thursday; with Monday = 0 that is slot 3.
_EPOCH_WEEKDAY = 3


@lru_cache(maxsize=16)
def _zone(name: str):
    from zoneinfo import ZoneInfo

    return ZoneInfo(name)


def to_local_seconds(t, timezone: str = "UTC") -> np.ndarray:
    """Shift epoch seconds by the zone's UTC offset so calendar fields come out local."""
    t = np.asarray(t, dtype=np.float64)
    if timezone.upper() == "UTC":
        return t
    from datetime import datetime

    zone = _zone(timezone)
    uniq, inverse = np.unique(t, return_inverse=True)
    offsets = np.array(
        [datetime.fromtimestamp(float(x), zone).utcoffset().total_seconds() for x in uniq]
    )
    return t + offsets[inverse].reshape(t.shape)


def _hour_of_day(local: np.ndarray) -> np.ndarray:
    return (np.floor(local / HOUR).astype(np.int64)) % 24


def _day_of_week(local: np.ndarray) -> np.ndarray:
    return (np.floor(local / DAY).astype(np.int64) + _EPOCH_WEEKDAY) % 7


def _day_of_month(local: np.ndarray) -> np.ndarray:
    days = np.floor(local / DAY).astype(np.int64).astype("datetime64[D]")
    first = days.astype("datetime64[M]").astype("datetime64[D]")
    return (days - first).astype(np.int64)


@dataclass(frozen=True)
class Granularity:
    name: str
    cycle_length: int
    extractor: Callable[[np.ndarray], np.ndarray]

    def slot(self, t, timezone: str = "UTC") -> np.ndarray:
        """Slot index in ``[0, cycle_length)`` for epoch-second timestamps."""
        return self.extractor(to_local_seconds(t, timezone))


GRANULARITIES: dict[str, Granularity] = {
    "hour_of_day": Granularity("hour_of_day", 24, _hour_of_day),
    "day_of_week": Granularity("day_of_week", 7, _day_of_week),
    "day_of_month": Granularity("day_of_month", 31, _day_of_month),
}

DEFAULT_GRANULARITIES = ("hour_of_day", "day_of_week")


def get_granularity(name: str) -> Granularity:
    try:
        return GRANULARITIES[name]
    except KeyError:
        raise ConfigurationError(f"unknown granularity {name!r}; choose from {sorted(GRANULARITIES)}") from None


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class AbsoluteTimeEncoder:
    """Convolution-pooled calendar embeddings summed over granularities and window radii.

    Parameters
    ----------
    d : int
        Embedding width.
    granularities : sequence of str
        Names from :data:`GRANULARITIES`.
    J : int
        Largest window radius; windows ``j = 1..J`` (``0..J`` with ``include_j0``).
    kernel_size : int
        Odd convolution width ``n``; one ``n x d`` kernel per radius, shared
        across granularities.
    """

    def __init__(
        self,
        d: int,
        granularities: Sequence[str] = DEFAULT_GRANULARITIES,
        J: int = 2,
        kernel_size: int = 3,
        include_j0: bool = False,
        timezone: str = "UTC",
        rng: Optional[np.random.Generator] = None,
    ):
        if J < 1:
            raise ConfigurationError(f"J must be >= 1, got {J}")
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel size must be a positive odd integer, got {kernel_size}")
        if d < 1:
            raise ConfigurationError(f"d must be positive, got {d}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d = d
        self.granularities = [get_granularity(g) for g in granularities]
        if not self.granularities:
            raise ConfigurationError("at least one granularity is required")
        self.J = J
        self.kernel_size = kernel_size
        self.include_j0 = include_j0
        self.timezone = timezone
        bound = 1.0 / math.sqrt(d)
        self.tables = {
            g.name: Tensor(_uniform(rng, (g.cycle_length, d), bound), requires_grad=True, name=f"abs.table.{g.name}")
            for g in self.granularities
        }
        self.kernels = {
            j: Tensor(_uniform(rng, (kernel_size, d), 1.0 / math.sqrt(kernel_size)), requires_grad=True,
                      name=f"abs.kernel.{j}")
            for j in self.radii
        }

    @property
    def radii(self) -> list[int]:
        return list(range(0 if self.include_j0 else 1, self.J + 1))

    def parameters(self) -> dict[str, Tensor]:
        params = {t.name: t for t in self.tables.values()}
        params.update({k.name: k for k in self.kernels.values()})
        return params

    def _granularity(self, g) -> Granularity:
        name = g.name if isinstance(g, Granularity) else g
        for gran in self.granularities:
            if gran.name == name:
                return gran
        raise ConfigurationError(f"granularity {name!r} is not enabled on this encoder")

    def window_slots(self, g, t: float, j: int) -> np.ndarray:
        gran = self._granularity(g)
        if not (0 if self.include_j0 else 1) <= j <= self.J:
            raise ConfigurationError(f"window radius j={j} outside [{self.radii[0]}, {self.J}]")
        center = int(gran.slot(np.asarray([t]), self.timezone)[0])
        return (center + np.arange(-j, j + 1)) % gran.cycle_length

    def surrounding_window(self, g, t: float, j: int) -> Tensor:
        """Rows of the slot table for ``slot(t) - j .. slot(t) + j`` (circular)."""
        gran = self._granularity(g)
        return T.take_rows(self.tables[gran.name], self.window_slots(gran, t, j))

    def absolute_encode(self, t: float) -> Tensor:
        """Direct per-timestamp evaluation, returning a length-``d`` tensor."""
        total = None
        for gran in self.granularities:
            for j in self.radii:
                window = self.surrounding_window(gran, t, j)
                pooled = T.maxpool_over_length(T.relu(T.conv1d_depthwise(window, self.kernels[j])))
                total = pooled if total is None else total + pooled
        return total

    def slot_features(self, g) -> Tensor:
        """Pooled features for every slot of one granularity, shape ``(cycle_length, d)``."""
        gran = self._granularity(g)
        slots = np.arange(gran.cycle_length)
        total = None
        for j in self.radii:
            idx = (slots[:, None] + np.arange(-j, j + 1)[None, :]) % gran.cycle_length
            window = T.take_rows(self.tables[gran.name], idx)
            pooled = T.maxpool_over_length(T.relu(T.conv1d_depthwise(window, self.kernels[j])))
            total = pooled if total is None else total + pooled
        return total

    def encode(self, t) -> Tensor:
        """Batched encoding: output shape ``np.shape(t) + (d,)``.

        The result depends on ``t`` only through its slot indices, so the
        window/conv/pool pipeline runs once per slot and is gathered.
        """
        t = np.asarray(t, dtype=np.float64)
        total = None
        for gran in self.granularities:
            feats = self.slot_features(gran)
            part = T.take_rows(feats, gran.slot(t, self.timezone))
            total = part if total is None else total + part
        return total

    __call__ = encode


def init_frequencies(d: int, seed=0, time_unit_seconds: float = HOUR,
                     min_period: float = HOUR, max_period: float = 30 * DAY) -> np.ndarray:
    """``d/2`` angular frequencies (radians per time unit) with log-uniform periods.

    Periods are drawn log-uniformly from ``[min_period, max_period]`` seconds.
    """
    if d < 2 or d % 2:
        raise ConfigurationError(f"relative time encoding needs an even d >= 2, got {d}")
    rng = np.random.default_rng(seed)
    periods = np.exp(rng.uniform(math.log(min_period), math.log(max_period), size=d // 2))
    return 2.0 * math.pi * time_unit_seconds / periods


class RelativeTimeEncoder:
    """``Phi(dt) = sqrt(2/d) [cos(w_1 x), sin(w_1 x), ...]`` with ``x = dt / time_unit``."""

    def __init__(self, d: int, time_unit_seconds: float = HOUR, omega=None, seed=0):
        if d < 2 or d % 2:
            raise ConfigurationError(f"relative time encoding needs an even d >= 2, got {d}")
        if time_unit_seconds <= 0:
            raise ConfigurationError("time_unit_seconds must be positive")
        self.d = d
        self.time_unit_seconds = float(time_unit_seconds)
        if omega is None:
            omega = init_frequencies(d, seed, time_unit_seconds)
        omega = np.asarray(omega, dtype=np.float64)
        if omega.shape != (d // 2,):
            raise ConfigurationError(f"expected {d // 2} frequencies, got shape {omega.shape}")
        self.omega = Tensor(omega, requires_grad=True, name="rel.omega")

    def parameters(self) -> dict[str, Tensor]:
        return {self.omega.name: self.omega}

    def encode(self, dt) -> Tensor:
        dt = np.asarray(dt, dtype=np.float64)
        x = Tensor((dt / self.time_unit_seconds).reshape(-1, 1))
        phase = T.matmul(x, T.reshape(self.omega, (1, -1)))
        pairs = T.stack([T.cos(phase), T.sin(phase)], axis=-1)
        out = T.reshape(pairs, dt.shape + (self.d,))
        return T.scale(out, math.sqrt(2.0 / self.d))

    __call__ = encode

    def relative_encode(self, dt: float) -> Tensor:
        return self.encode(np.asarray(dt, dtype=np.float64))


def kernel_value(enc: RelativeTimeEncoder, t1: float, t2: float) -> float:
    """``<Phi(t1), Phi(t2)>`` via the closed form ``(2/d) sum cos(w (t2 - t1))``."""
    x = (t2 - t1) / enc.time_unit_seconds
    return float(np.mean(np.cos(enc.omega.data * x)))
