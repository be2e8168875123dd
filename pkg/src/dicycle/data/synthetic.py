"""Synthetic click logs with planted absolute and relative time cycles.

Each (user, category) pair is an inhomogeneous point process simulated by
thinning.  Its rate is

    base * affinity[u, c] * (1 + atc[c](hour)) * (1 + rtc[c](t - last))

where ``atc`` is a per-hour bump profile and ``rtc`` places Gaussian bumps at
multiples of a period after the pair's previous event, each cycle scaled by
``decay``.  Noise categories keep only the constant part.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigurationError
from .eventlog import EventLog

HOUR = 3600.0
# 2024-01-01 00:00:00 UTC, a Monday
DEFAULT_START = 1704067200


@dataclass
class CategoryProfile:
    name: str
    atc_peaks: dict[int, float] = field(default_factory=dict)
    rtc_period_hours: float = 0.0
    rtc_amplitude: float = 0.0
    rtc_decay: float = 0.7
    rtc_width_hours: float = 1.5
    noise: bool = False

    def validate(self) -> None:
        for hour, amp in self.atc_peaks.items():
            if not 0 <= int(hour) < 24:
                raise ConfigurationError(f"{self.name}: peak hour {hour} outside [0, 24)")
            if amp < 0:
                raise ConfigurationError(f"{self.name}: ATC amplitude must be >= 0, got {amp}")
        if self.rtc_amplitude < 0:
            raise ConfigurationError(f"{self.name}: RTC amplitude must be >= 0")
        if self.rtc_amplitude > 0 and self.rtc_period_hours <= 0:
            raise ConfigurationError(f"{self.name}: RTC period must be > 0")
        if not 0.0 <= self.rtc_decay <= 1.0:
            raise ConfigurationError(f"{self.name}: RTC decay must lie in [0, 1]")
        if self.rtc_width_hours <= 0:
            raise ConfigurationError(f"{self.name}: RTC width must be > 0")

    @property
    def has_rtc(self) -> bool:
        return not self.noise and self.rtc_amplitude > 0

    def atc_factor(self, hours: np.ndarray) -> np.ndarray:
        if self.noise or not self.atc_peaks:
            return np.ones(np.shape(hours))
        profile = np.zeros(24)
        for hour, amp in self.atc_peaks.items():
            profile[int(hour)] = amp
        return 1.0 + profile[np.asarray(hours, dtype=np.int64)]

    def rtc_factor(self, elapsed_hours: np.ndarray) -> np.ndarray:
        elapsed = np.asarray(elapsed_hours, dtype=np.float64)
        if not self.has_rtc:
            return np.ones(elapsed.shape)
        period = self.rtc_period_hours
        cycle = np.maximum(np.rint(elapsed / period), 1.0)
        bump = np.exp(-0.5 * ((elapsed - cycle * period) / self.rtc_width_hours) ** 2)
        return 1.0 + self.rtc_amplitude * self.rtc_decay ** (cycle - 1.0) * bump

    @property
    def max_factor(self) -> float:
        atc = 1.0 + (max(self.atc_peaks.values()) if self.atc_peaks and not self.noise else 0.0)
        return atc * (1.0 + (self.rtc_amplitude if self.has_rtc else 0.0))


def default_categories() -> list[CategoryProfile]:
    return [
        CategoryProfile("meals", atc_peaks={11: 30.0, 18: 30.0, 21: 30.0}),
        CategoryProfile("commute", atc_peaks={7: 30.0, 8: 30.0, 17: 30.0}),
        CategoryProfile("taxi", rtc_period_hours=24.0, rtc_amplitude=40.0, rtc_decay=0.7),
        # multiples of 10h land on scattered hours of the day, unlike the taxi cycle
        CategoryProfile("refill", rtc_period_hours=10.0, rtc_amplitude=40.0, rtc_decay=0.7),
        CategoryProfile("noise", noise=True),
    ]


@dataclass
class SyntheticSpec:
    n_users: int = 200
    n_items: int = 100
    categories: list[CategoryProfile] = field(default_factory=default_categories)
    noise_fraction: float = 0.2
    base_intensity: float = 0.005
    horizon_days: float = 60.0
    start_epoch: int = DEFAULT_START
    # near-uniform preferences keep item identity weak, so timing carries the signal
    affinity_concentration: float = 50.0
    item_concentration: float = 50.0
    seed: int = 7

    def validate(self) -> None:
        if self.n_users < 1 or self.n_items < 1:
            raise ConfigurationError("n_users and n_items must be positive")
        if not self.categories:
            raise ConfigurationError("at least one category is required")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate category names {names}")
        for cat in self.categories:
            cat.validate()
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ConfigurationError(f"noise_fraction must lie in [0, 1], got {self.noise_fraction}")
        if self.base_intensity <= 0 or self.horizon_days <= 0:
            raise ConfigurationError("base_intensity and horizon_days must be positive")
        if self.start_epoch < 0:
            raise ConfigurationError("start_epoch must be non-negative")
        if self.affinity_concentration <= 0 or self.item_concentration <= 0:
            raise ConfigurationError("Dirichlet concentrations must be positive")
        n_noise_cats = sum(c.noise for c in self.categories)
        n_signal_cats = len(self.categories) - n_noise_cats
        n_noise_items, n_signal_items = self.item_split()
        if n_noise_cats and n_noise_items < n_noise_cats:
            raise ConfigurationError("noise_fraction leaves a noise category without items")
        if n_signal_cats and n_signal_items < n_signal_cats:
            raise ConfigurationError("too few items for the patterned categories")

    def item_split(self) -> tuple[int, int]:
        has_noise = any(c.noise for c in self.categories)
        has_signal = any(not c.noise for c in self.categories)
        n_noise = round(self.noise_fraction * self.n_items) if has_noise else 0
        if not has_signal:
            n_noise = self.n_items
        return n_noise, self.n_items - n_noise

    @property
    def horizon_seconds(self) -> float:
        return self.horizon_days * 86400.0

    def to_dict(self) -> dict:
        out = asdict(self)
        for cat in out["categories"]:
            cat["atc_peaks"] = {str(k): float(v) for k, v in cat["atc_peaks"].items()}
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticSpec":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown synthetic spec keys {sorted(unknown)}")
        if "categories" in raw:
            cats = []
            for c in raw["categories"]:
                c = dict(c)
                c["atc_peaks"] = {int(k): float(v) for k, v in (c.get("atc_peaks") or {}).items()}
                try:
                    cats.append(CategoryProfile(**c))
                except TypeError as exc:
                    raise ConfigurationError(f"bad category entry {c}: {exc}") from None
            raw["categories"] = cats
        spec = cls(**raw)
        spec.validate()
        return spec


def item_name(k: int) -> str:
    return f"i{k:04d}"


def user_name(u: int) -> str:
    return f"u{u:04d}"


@dataclass
class GroundTruth:
    """Everything needed to evaluate the generating intensities after the fact."""

    spec: SyntheticSpec
    item_category: np.ndarray
    affinity: np.ndarray
    item_preference: list[np.ndarray]

    def category_items(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.item_category == c)

    def intensity(self, user: int, category: int, t, last_event: Optional[float]) -> np.ndarray:
        """Rate (events per hour) at epoch seconds ``t`` given the pair's previous event time."""
        cat = self.spec.categories[category]
        t = np.asarray(t, dtype=np.float64)
        base = self.spec.base_intensity * self.affinity[user, category]
        hours = (np.floor(t / HOUR).astype(np.int64)) % 24
        rate = base * cat.atc_factor(hours)
        if cat.has_rtc and last_event is not None:
            rate = rate * cat.rtc_factor((t - last_event) / HOUR)
        return rate

    def expected_count(self, log: EventLog, step_seconds: float = 60.0) -> float:
        """Integrated intensity along the realised history (the compensator).

        ``N - expected_count`` is a zero-mean martingale with variance equal to
        its expectation, so the observed total should sit within a few
        ``sqrt(expected_count)``.
        """
        spec = self.spec
        start = float(spec.start_epoch)
        grid = start + (np.arange(int(spec.horizon_seconds // step_seconds)) + 0.5) * step_seconds
        hours = (np.floor(grid / HOUR).astype(np.int64)) % 24
        by_name = {item_name(k): c for k, c in enumerate(self.item_category)}
        cat_of_log_item = np.array([by_name.get(name, -1) for name in log.item_ids], dtype=np.int64)
        user_index = {name: k for k, name in enumerate(log.user_ids)}
        total = 0.0
        for c, cat in enumerate(spec.categories):
            atc = cat.atc_factor(hours)
            for u in range(spec.n_users):
                base = spec.base_intensity * self.affinity[u, c]
                if base == 0:
                    continue
                if not cat.has_rtc:
                    total += base * atc.sum() * step_seconds / HOUR
                    continue
                uidx = user_index.get(user_name(u), -1)
                events = np.sort(log.timestamps[(log.users == uidx) & (cat_of_log_item[log.items] == c)]) \
                    if uidx >= 0 else np.zeros(0)
                pos = np.searchsorted(events, grid, side="right") - 1
                rate = np.ones_like(grid)
                has_last = pos >= 0
                if has_last.any():
                    rate[has_last] = cat.rtc_factor((grid[has_last] - events[pos[has_last]]) / HOUR)
                total += base * float((atc * rate).sum()) * step_seconds / HOUR
        return total

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "item_category": {item_name(k): self.spec.categories[c].name for k, c in enumerate(self.item_category)},
            "affinity": {user_name(u): [float(a) for a in row] for u, row in enumerate(self.affinity)},
        }


def _assign_categories(spec: SyntheticSpec) -> np.ndarray:
    n_noise, n_signal = spec.item_split()
    noise_idx = [c for c, cat in enumerate(spec.categories) if cat.noise]
    signal_idx = [c for c, cat in enumerate(spec.categories) if not cat.noise]
    out = np.empty(spec.n_items, dtype=np.int64)
    if signal_idx:
        out[:n_signal] = np.array(signal_idx)[np.arange(n_signal) * len(signal_idx) // max(n_signal, 1)]
    if noise_idx:
        out[n_signal:] = np.array(noise_idx)[np.arange(n_noise) * len(noise_idx) // max(n_noise, 1)]
    return out


def _simulate_pair(rng: np.random.Generator, truth: GroundTruth, user: int, c: int) -> np.ndarray:
    spec = truth.spec
    cat = spec.categories[c]
    start, end = float(spec.start_epoch), float(spec.start_epoch + spec.horizon_seconds)
    lam_max = spec.base_intensity * truth.affinity[user, c] * cat.max_factor / HOUR  # per second
    if lam_max <= 0:
        return np.zeros(0)
    if not cat.has_rtc:
        n = rng.poisson(lam_max * (end - start))
        cand = np.sort(rng.uniform(start, end, size=n))
        accept = rng.uniform(size=n) * lam_max * HOUR < truth.intensity(user, c, cand, None)
        return cand[accept]

    # the rate depends on the previous event, so thin window by window and
    # restart from every accepted point
    window = 7 * 86400.0
    events: list[float] = []
    last: Optional[float] = None
    t = start
    while t < end:
        horizon = min(t + window, end)
        n = rng.poisson(lam_max * (horizon - t))
        cand = np.sort(rng.uniform(t, horizon, size=n))
        u = rng.uniform(size=n)
        accept = np.flatnonzero(u * lam_max * HOUR < truth.intensity(user, c, cand, last))
        if accept.size == 0:
            t = horizon
            continue
        last = float(cand[accept[0]])
        events.append(last)
        t = last
    return np.asarray(events)


def generate_synthetic(spec: SyntheticSpec) -> tuple[EventLog, GroundTruth]:
    """Simulate a click log; per-user RNG streams keep output independent of scheduling."""
    spec.validate()
    master = np.random.default_rng([spec.seed, 0])
    n_cats = len(spec.categories)
    item_category = _assign_categories(spec)
    affinity = master.dirichlet(np.full(n_cats, spec.affinity_concentration), size=spec.n_users) * n_cats
    item_preference = []
    for c in range(n_cats):
        members = np.flatnonzero(item_category == c)
        item_preference.append(
            master.dirichlet(np.full(len(members), spec.item_concentration), size=spec.n_users)
            if len(members) else np.zeros((spec.n_users, 0))
        )
    truth = GroundTruth(spec, item_category, affinity, item_preference)

    records = []
    for user in range(spec.n_users):
        rng = np.random.default_rng([spec.seed, 1, user])
        rows = []
        for c in range(n_cats):
            members = truth.category_items(c)
            if len(members) == 0:
                continue
            times = _simulate_pair(rng, truth, user, c)
            if times.size == 0:
                continue
            picks = rng.choice(members, size=times.size, p=item_preference[c][user])
            rows.extend(zip(np.floor(times).astype(np.int64).tolist(), picks.tolist()))
        rows.sort()
        records.extend((user_name(user), item_name(item), ts, 1) for ts, item in rows)
    log = EventLog.from_records(records, item_universe=[item_name(k) for k in range(spec.n_items)])
    return log, truth


def hourly_histogram(log: EventLog, items: Optional[Sequence[int]] = None) -> np.ndarray:
    """Event counts per UTC hour of day, optionally restricted to some log item indices."""
    ts = log.timestamps if items is None else log.timestamps[np.isin(log.items, items)]
    return np.bincount(((ts // 3600) % 24).astype(np.int64), minlength=24)


def inter_event_hours(log: EventLog, items: Sequence[int]) -> np.ndarray:
    """Gaps (hours) between consecutive events of the same user within an item set."""
    sel = np.isin(log.items, items)
    gaps = []
    for u in np.unique(log.users[sel]):
        ts = np.sort(log.timestamps[sel & (log.users == u)])
        gaps.append(np.diff(ts) / HOUR)
    return np.concatenate(gaps) if gaps else np.zeros(0)


def log_items_of_category(log: EventLog, truth: GroundTruth, name: str) -> np.ndarray:
    c = [cat.name for cat in truth.spec.categories].index(name)
    wanted = {item_name(k) for k in truth.category_items(c)}
    return np.array([k for k, iid in enumerate(log.item_ids) if iid in wanted], dtype=np.int64)
