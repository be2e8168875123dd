"""Training/eval instances, leave-last-out splitting and negative sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigurationError, DataError
from .eventlog import EventLog

# Row 0 of every item table is reserved for padding; log item k maps to k + 1.
PAD_ITEM = 0


@dataclass(eq=False)
class Sample:
    """One (behaviors, target item, target time, label) instance.

    Behaviors are stored unpadded and oldest first; :func:`collate` adds the
    left padding and mask.
    """

    user: int
    behavior_items: np.ndarray
    behavior_times: np.ndarray
    target_item: int
    target_time: int
    label: int

    @property
    def behaviors(self) -> list[tuple[int, int]]:
        return list(zip(self.behavior_items.tolist(), self.behavior_times.tolist()))

    def validate(self) -> None:
        if self.label not in (0, 1):
            raise DataError(f"sample for user {self.user}: label {self.label!r} not in {{0, 1}}")
        if len(self.behavior_items) != len(self.behavior_times):
            raise DataError(f"sample for user {self.user}: behavior items/times length mismatch")
        times = self.behavior_times
        if len(times) and (np.any(np.diff(times) < 0) or times[-1] > self.target_time):
            raise DataError(f"sample for user {self.user}: behavior times not ordered before target time")
        if np.any(self.behavior_items == PAD_ITEM) or self.target_item == PAD_ITEM:
            raise DataError(f"sample for user {self.user}: uses the reserved padding item id")


@dataclass
class Batch:
    """Left-padded arrays for a list of samples; ``mask`` is true on real behaviors."""

    items: np.ndarray
    times: np.ndarray
    mask: np.ndarray
    target_item: np.ndarray
    target_time: np.ndarray
    label: np.ndarray
    user: np.ndarray

    def __len__(self) -> int:
        return int(self.target_item.shape[0])

    def take(self, rows) -> "Batch":
        """Sub-batch of ``rows`` with all-padding leading columns dropped."""
        rows = np.asarray(rows, dtype=np.int64)
        mask = self.mask[rows]
        used = np.flatnonzero(mask.any(axis=0))
        start = int(used[0]) if used.size else mask.shape[1] - 1
        return Batch(
            items=self.items[rows, start:],
            times=self.times[rows, start:],
            mask=mask[:, start:],
            target_item=self.target_item[rows],
            target_time=self.target_time[rows],
            label=self.label[rows],
            user=self.user[rows],
        )


def collate(samples: Sequence[Sample], max_len: Optional[int] = None) -> Batch:
    """Stack samples, keeping the most recent ``max_len`` behaviors of each.

    The padded width is the longest kept history in the batch (at least 1);
    padding never changes model outputs, so narrower batches are just cheaper.
    """
    if not samples:
        raise DataError("cannot collate an empty list of samples")
    lengths = [len(s.behavior_items) if max_len is None else min(len(s.behavior_items), max_len) for s in samples]
    width = max(1, max(lengths))
    b = len(samples)
    items = np.full((b, width), PAD_ITEM, dtype=np.int64)
    times = np.zeros((b, width), dtype=np.float64)
    mask = np.zeros((b, width), dtype=bool)
    for row, (s, n) in enumerate(zip(samples, lengths)):
        times[row, :] = s.target_time
        if n:
            items[row, width - n :] = s.behavior_items[-n:]
            times[row, width - n :] = s.behavior_times[-n:]
            mask[row, width - n :] = True
    return Batch(
        items=items,
        times=times,
        mask=mask,
        target_item=np.array([s.target_item for s in samples], dtype=np.int64),
        target_time=np.array([s.target_time for s in samples], dtype=np.float64),
        label=np.array([s.label for s in samples], dtype=np.float64),
        user=np.array([s.user for s in samples], dtype=np.int64),
    )


@dataclass
class SampleSplit:
    train: list[Sample]
    test: list[Sample]
    n_items: int
    excluded_users: int = 0
    skipped_negatives: int = 0
    stats: dict = field(default_factory=dict)


def _user_rng(seed: int, user: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(user)])


def build_samples(log: EventLog, max_len: int = 50, negative_ratio: int = 1, seed: int = 0) -> SampleSplit:
    """Leave-last-out split with uniformly sampled negatives.

    Every positive interaction becomes a sample whose behaviors are the up to
    ``max_len`` preceding interactions; each gets ``negative_ratio`` negatives
    drawn from items the user never interacted with, sharing the positive's
    behaviors and timestamp.  A user's final interaction (and its negatives)
    goes to test.  Rows labelled 0 are ignored.  Item indices in the returned
    samples are shifted by one so that 0 can serve as padding.
    """
    if max_len < 1:
        raise ConfigurationError(f"max_len must be >= 1, got {max_len}")
    if negative_ratio < 1:
        raise ConfigurationError(f"negative_ratio must be >= 1, got {negative_ratio}")
    train: list[Sample] = []
    test: list[Sample] = []
    excluded = skipped = 0
    all_items = np.arange(log.n_items)
    positive = log.labels != 0

    order = np.lexsort((np.arange(len(log)), log.timestamps, log.users))
    order = order[positive[order]]
    bounds = np.searchsorted(log.users[order], np.arange(log.n_users + 1))
    for user in range(log.n_users):
        rows = order[bounds[user] : bounds[user + 1]]
        if len(rows) < 2:
            excluded += 1
            continue
        seq_items = log.items[rows] + 1
        seq_times = log.timestamps[rows]
        seen = np.unique(log.items[log.users == user])
        candidates = np.setdiff1d(all_items, seen, assume_unique=True) + 1
        rng = _user_rng(seed, user)
        for k in range(len(rows)):
            lo = max(0, k - max_len)
            hist_items, hist_times = seq_items[lo:k], seq_times[lo:k]
            dest = test if k == len(rows) - 1 else train
            dest.append(Sample(user, hist_items, hist_times, int(seq_items[k]), int(seq_times[k]), 1))
            if len(candidates) < negative_ratio:
                skipped += 1
                continue
            for neg in rng.choice(candidates, size=negative_ratio, replace=False):
                dest.append(Sample(user, hist_items, hist_times, int(neg), int(seq_times[k]), 0))
    return SampleSplit(
        train=train,
        test=test,
        n_items=log.n_items,
        excluded_users=excluded,
        skipped_negatives=skipped,
        stats={"users": log.n_users - excluded, "train": len(train), "test": len(test)},
    )
