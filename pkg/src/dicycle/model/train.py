"""Mini-batch Adam training with held-out early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .. import metrics
from ..config import ExperimentConfig
from ..data.samples import Sample, collate
from ..errors import TrainingError, UndefinedMetricError
from ..tensor import Adam
from .network import CTRModel, cross_entropy_loss

logger = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    split: str
    logloss: float
    auc: float


@dataclass
class TrainResult:
    model: CTRModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _safe_auc(scores, labels) -> float:
    try:
        return metrics.auc(scores, labels)
    except UndefinedMetricError:
        return float("nan")


def split_validation(samples: Sequence[Sample], fraction: float, seed: int) -> tuple[list[Sample], list[Sample]]:
    """Hold out ``fraction`` of the samples, chosen by a seeded permutation."""
    n_valid = int(round(fraction * len(samples)))
    if n_valid == 0 or n_valid >= len(samples):
        return list(samples), []
    perm = np.random.default_rng([int(seed), 17]).permutation(len(samples))
    held = set(perm[:n_valid].tolist())
    train = [s for k, s in enumerate(samples) if k not in held]
    valid = [samples[k] for k in sorted(held)]
    return train, valid


def evaluate_model(model: CTRModel, samples: Sequence[Sample], batch_size: int = 1024) -> metrics.MetricReport:
    scores = model.predict(samples, batch_size)
    return metrics.evaluate([s.user for s in samples], scores, [s.label for s in samples])


def train(
    config: ExperimentConfig,
    samples: Sequence[Sample],
    n_items: int,
    valid_samples: Optional[Sequence[Sample]] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Train ``config.variant`` on ``samples``.

    The optimiser consumes the batch-mean loss; the summed loss is what gets
    averaged into the reported per-epoch logloss.  Unless ``valid_samples``
    is given, ``config.valid_fraction`` of ``samples`` is held out; training
    stops after ``config.patience`` epochs without held-out logloss
    improvement and the best parameters are restored.
    """
    if not samples:
        raise TrainingError("cannot train on an empty dataset")
    if valid_samples is None:
        train_samples, valid_samples = split_validation(samples, config.valid_fraction, config.seed)
    else:
        train_samples = list(samples)
    if not train_samples:
        raise TrainingError("no training samples left after the validation split")

    model = CTRModel(n_items, config.model_config(), config.variant, seed=config.seed)
    optimizer = Adam(model.parameters(), lr=config.lr, lr_scale={"rel.omega": config.omega_lr_scale})
    full = collate(train_samples, config.max_len)
    rng = np.random.default_rng([int(config.seed), 23])
    result = TrainResult(model)
    best_loss, best_state, wait = math.inf, model.state_dict(), 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(full))
        total = 0.0
        scores = np.empty(len(full))
        for start in range(0, len(order), config.batch_size):
            rows = order[start : start + config.batch_size]
            batch = full.take(rows)
            out = model(batch)
            loss_sum, loss_mean = cross_entropy_loss(out.probs, batch.label)
            value = loss_sum.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch starting {start}")
            optimizer.zero_grad()
            loss_mean.backward()
            optimizer.step()
            total += value
            scores[rows] = out.probs.data
        records = [EpochRecord(epoch, "train", total / len(full), _safe_auc(scores, full.label))]

        monitor = records[0].logloss
        if valid_samples:
            report = evaluate_model(model, valid_samples)
            records.append(EpochRecord(epoch, "valid", report.logloss, report.auc))
            monitor = report.logloss
        for rec in records:
            result.history.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
        logger.info("epoch %d: %s", epoch, ", ".join(f"{r.split} logloss={r.logloss:.4f} auc={r.auc:.4f}"
                                                      for r in records))

        if monitor < best_loss:
            best_loss, best_state, wait = monitor, model.state_dict(), 0
            result.best_epoch = epoch
        else:
            wait += 1
            if wait >= config.patience:
                result.stopped_early = True
                break

    model.load_state_dict(best_state)
    return result


def history_to_csv(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch,split,logloss,auc"]
    for rec in history:
        lines.append(f"{rec.epoch},{rec.split},{metrics.format_value(rec.logloss)},{metrics.format_value(rec.auc)}")
    return "\n".join(lines) + "\n"
