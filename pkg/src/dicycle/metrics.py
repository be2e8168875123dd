"""AUC, GAUC, logloss and RelaImpr.

``auc`` uses the rank-sum (Mann-Whitney) form with average ranks for ties;
``auc_exhaustive`` is the O(P*N) pair-counting definition kept as an oracle.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import DataError, UndefinedMetricError


@dataclass(frozen=True)
class ScoredExample:
    user_id: object
    score: float
    label: int


def _arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise DataError(f"{s.size} scores but {y.size} labels")
    if not np.isfinite(s).all():
        raise DataError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], sorted_vals.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(values.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative example")
    rank_sum = average_ranks(s)[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_exhaustive(scores, labels) -> float:
    """(wins + ties / 2) / (P * N) over every positive/negative pair."""
    s, y = _arrays(scores, labels)
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative example")
    wins = ties = 0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1
            elif p == n:
                ties += 1
    return (wins + 0.5 * ties) / (pos.size * neg.size)


class AucAccumulator:
    """Exact streaming AUC: per-score label counts, mergeable in any order."""

    def __init__(self):
        self.pos: Counter = Counter()
        self.neg: Counter = Counter()

    def update(self, scores, labels) -> "AucAccumulator":
        s, y = _arrays(scores, labels)
        self.pos.update(s[y == 1].tolist())
        self.neg.update(s[y == 0].tolist())
        return self

    def merge(self, other: "AucAccumulator") -> "AucAccumulator":
        out = AucAccumulator()
        out.pos = self.pos + other.pos
        out.neg = self.neg + other.neg
        return out

    def value(self) -> float:
        n_pos, n_neg = sum(self.pos.values()), sum(self.neg.values())
        if n_pos == 0 or n_neg == 0:
            raise UndefinedMetricError("AUC needs at least one positive and one negative example")
        twice_wins = 0
        below = 0
        for score in sorted(set(self.pos) | set(self.neg)):
            p, n = self.pos.get(score, 0), self.neg.get(score, 0)
            twice_wins += 2 * p * below + p * n
            below += n
        return twice_wins / (2 * n_pos * n_neg)


def gauc_parts(users, scores, labels) -> tuple[float, int, dict]:
    """Weighted AUC sum, total weight and per-user AUCs over eligible users.

    Users whose examples are all one class are skipped entirely.
    """
    s, y = _arrays(scores, labels)
    u = np.asarray(users).reshape(-1)
    if u.size != s.size:
        raise DataError(f"{u.size} user ids but {s.size} scores")
    order = np.argsort(u, kind="mergesort")
    u_sorted = u[order]
    cuts = np.flatnonzero(u_sorted[1:] != u_sorted[:-1]) + 1
    total, weight, per_user = 0.0, 0, {}
    for idx in np.split(order, cuts):
        if idx.size == 0:
            continue
        yu = y[idx]
        if yu.min() == yu.max():
            continue
        value = auc(s[idx], yu)
        key = u[idx[0]]
        per_user[key.item() if isinstance(key, np.generic) else key] = value
        total += idx.size * value
        weight += idx.size
    return total, weight, per_user


def gauc(users, scores, labels) -> float:
    """Per-user AUC averaged with weights equal to each user's example count."""
    total, weight, _ = gauc_parts(users, scores, labels)
    if weight == 0:
        raise UndefinedMetricError("GAUC needs at least one user with both positive and negative examples")
    return total / weight


def logloss(scores, labels, eps: float = 1e-12) -> float:
    s, y = _arrays(scores, labels)
    p = np.clip(s, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1.0 - p)))


def rela_impr(target_metric: float, base_metric: float) -> float:
    """Relative improvement in percent, measured above the 0.5 random-guess floor."""
    if base_metric == 0.5:
        raise UndefinedMetricError("RelaImpr is undefined for a base metric of exactly 0.5")
    return ((target_metric - 0.5) / (base_metric - 0.5) - 1.0) * 100.0


@dataclass
class MetricReport:
    auc: float
    gauc: float
    logloss: float
    n_examples: int
    n_users: int
    n_gauc_users: int
    per_user: dict = field(default_factory=dict, repr=False)

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("per_user")
        return row


def evaluate(users, scores, labels, keep_per_user: bool = False) -> MetricReport:
    s, y = _arrays(scores, labels)
    try:
        a = auc(s, y)
    except UndefinedMetricError:
        a = float("nan")
    total, weight, per_user = gauc_parts(users, s, y)
    return MetricReport(
        auc=a,
        gauc=total / weight if weight else float("nan"),
        logloss=logloss(s, y),
        n_examples=int(s.size),
        n_users=int(np.unique(np.asarray(users)).size),
        n_gauc_users=len(per_user),
        per_user=per_user if keep_per_user else {},
    )


def evaluate_examples(examples: Iterable[ScoredExample]) -> MetricReport:
    examples = list(examples)
    return evaluate([e.user_id for e in examples], [e.score for e in examples], [e.label for e in examples])


def format_value(x: float) -> str:
    return "nan" if x != x else f"{x:.6f}"


def reports_to_csv(reports: dict[str, MetricReport], baseline: Optional[str] = None) -> str:
    """One row per named report; with ``baseline`` adds RelaImpr columns against it."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["name", "auc", "gauc", "logloss", "n_examples", "n_users"]
    if baseline is not None:
        header += ["auc_rela_impr_pct", "gauc_rela_impr_pct"]
    writer.writerow(header)
    base = reports.get(baseline) if baseline is not None else None
    for name, rep in reports.items():
        row = [name, format_value(rep.auc), format_value(rep.gauc), format_value(rep.logloss),
               rep.n_examples, rep.n_users]
        if baseline is not None:
            row += [_safe_impr(rep.auc, base.auc), _safe_impr(rep.gauc, base.gauc)]
        writer.writerow(row)
    return buf.getvalue()


def _safe_impr(target: float, base: float) -> str:
    try:
        return f"{rela_impr(target, base):.4f}"
    except UndefinedMetricError:
        return "nan"


def format_table(reports: dict[str, MetricReport]) -> str:
    width = max([len(n) for n in reports] + [4])
    lines = [f"{'name':<{width}}  {'AUC':>8}  {'GAUC':>8}  {'logloss':>8}"]
    for name, rep in reports.items():
        lines.append(f"{name:<{width}}  {rep.auc:8.4f}  {rep.gauc:8.4f}  {rep.logloss:8.4f}")
    return "\n".join(lines)
