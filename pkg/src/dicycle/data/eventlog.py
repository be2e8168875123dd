"""Timestamped interaction logs and their CSV representation."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ..errors import SchemaError

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

COLUMNS = ("user_id", "item_id", "timestamp", "label")
REQUIRED_COLUMNS = ("user_id", "item_id", "timestamp")
NO_LABEL = -1


@dataclass
class EventLog:
    """Interaction rows with string ids interned to dense indices.

    ``users[k]`` / ``items[k]`` index into ``user_ids`` / ``item_ids``;
    ``labels[k]`` is 0, 1 or ``NO_LABEL``.  Interning is by sorted id so the
    indices do not depend on row order.
    """

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    labels: np.ndarray
    user_ids: list[str]
    item_ids: list[str]
    rejected: int = 0
    rejection_reasons: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.users.shape[0])

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @classmethod
    def from_records(cls, records: Sequence[tuple], item_universe: Optional[Sequence[str]] = None,
                     rejected: int = 0, rejection_reasons: Optional[dict] = None) -> "EventLog":
        """Build from ``(user_id, item_id, timestamp[, label])`` tuples.

        ``item_universe`` lets the vocabulary include items with no rows,
        which matters for negative sampling.
        """
        user_ids = sorted({str(r[0]) for r in records})
        item_set = {str(r[1]) for r in records}
        if item_universe is not None:
            item_set |= {str(i) for i in item_universe}
        item_ids = sorted(item_set)
        uidx = {u: k for k, u in enumerate(user_ids)}
        iidx = {i: k for k, i in enumerate(item_ids)}
        n = len(records)
        users = np.fromiter((uidx[str(r[0])] for r in records), dtype=np.int64, count=n)
        items = np.fromiter((iidx[str(r[1])] for r in records), dtype=np.int64, count=n)
        stamps = np.fromiter((int(r[2]) for r in records), dtype=np.int64, count=n)
        labels = np.fromiter(
            ((NO_LABEL if len(r) < 4 or r[3] is None else int(r[3])) for r in records), dtype=np.int64, count=n
        )
        return cls(users, items, stamps, labels, user_ids, item_ids, rejected, dict(rejection_reasons or {}))

    def records(self) -> list[tuple[str, str, int, Optional[int]]]:
        return [
            (self.user_ids[u], self.item_ids[i], int(t), None if lab == NO_LABEL else int(lab))
            for u, i, t, lab in zip(self.users, self.items, self.timestamps, self.labels)
        ]

    def user_rows(self, user: int) -> np.ndarray:
        """Row indices of one user ordered by timestamp (stable on ties)."""
        rows = np.flatnonzero(self.users == user)
        return rows[np.argsort(self.timestamps[rows], kind="stable")]


def _parse_row(row: dict) -> tuple[Optional[tuple], Optional[str]]:
    user = (row.get("user_id") or "").strip()
    item = (row.get("item_id") or "").strip()
    if not user or not item:
        return None, "missing id"
    raw_ts = (row.get("timestamp") or "").strip()
    try:
        ts = int(raw_ts)
    except ValueError:
        return None, "bad timestamp"
    if ts < 0:
        return None, "negative timestamp"
    raw_label = (row.get("label") or "").strip()
    if raw_label == "":
        label = None
    elif raw_label in ("0", "1"):
        label = int(raw_label)
    else:
        return None, "bad label"
    return (user, item, ts, label), None


def ingest(path: PathLike, delimiter: str = ",") -> EventLog:
    """Parse a delimiter-separated log with a header row.

    Malformed rows are dropped and counted in ``EventLog.rejected``.

    Raises
    ------
    SchemaError
        If the header lacks ``user_id``, ``item_id`` or ``timestamp``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header was {header}")
        records, reasons = [], {}
        for row in reader:
            if None in row or any(v is None for v in row.values()):
                reason = "wrong field count"
                rec = None
            else:
                rec, reason = _parse_row(row)
            if rec is None:
                reasons[reason] = reasons.get(reason, 0) + 1
                continue
            records.append(rec)
    rejected = sum(reasons.values())
    if rejected:
        logger.warning("%s: rejected %d malformed row(s): %s", path, rejected, reasons)
    return EventLog.from_records(records, rejected=rejected, rejection_reasons=reasons)


def write_log(log: EventLog, path: PathLike, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(COLUMNS)
        for user, item, ts, label in log.records():
            writer.writerow((user, item, ts, "" if label is None else label))
