"""Command-line entry point: ``dicycle {generate,train,eval,ablate,probe}``.

Every command reads the same flat TOML config.  Outputs that depend only on
inputs and seed are written deterministically; wall-clock fields go to a
separate ``metadata.json`` so the rest of a run directory is reproducible
byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import shutil
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import __version__, metrics
from .config import ExperimentConfig, load_config, load_toml, save_config
from .data import EventLog, SampleSplit, SyntheticSpec, build_samples, generate_synthetic, ingest, write_log
from .data.synthetic import GroundTruth, hourly_histogram, item_name
from .errors import ConfigurationError, DiCycleError
from .model import ABLATIONS, CTRModel, Variant, probe_timestamp_sweep
from .model.train import evaluate_model, history_to_csv, train
from .tensor import load_checkpoint, save_checkpoint

logger = logging.getLogger("dicycle")

CONFIG_FILE = "config.toml"
CHECKPOINT_FILE = "model.ckpt"
HISTORY_FILE = "history.csv"
REPORT_FILE = "report.csv"
METADATA_FILE = "metadata.json"
FAILED_FILE = "FAILED"


class CommandError(DiCycleError):
    """User-facing failure that maps to a non-zero exit code."""


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path: str, payload: dict) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _prepare_dir(path: str, force: bool) -> None:
    if os.path.exists(path):
        if not force:
            raise CommandError(f"{path} already exists; pass --force to overwrite it")
        if os.path.isdir(path):
            shutil.rmtree(path)
        else:
            os.remove(path)
    os.makedirs(path)


def _prepare_file(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise CommandError(f"{path} already exists; pass --force to overwrite it")
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def load_synthetic_spec(path: str) -> SyntheticSpec:
    """Read a synthetic-data spec from TOML or JSON (by extension)."""
    if path.endswith(".json"):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"spec file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    else:
        raw = load_toml(path)
    try:
        return SyntheticSpec.from_dict(raw)
    except TypeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def load_dataset(cfg: ExperimentConfig) -> tuple[EventLog, Optional[GroundTruth]]:
    """The event log named by ``cfg``: a CSV file, a synthetic spec, or the default synthetic spec."""
    if cfg.data_path:
        return ingest(cfg.data_path), None
    spec = load_synthetic_spec(cfg.synthetic_spec) if cfg.synthetic_spec else SyntheticSpec()
    return generate_synthetic(spec)


def build_split(cfg: ExperimentConfig, log: EventLog) -> SampleSplit:
    return build_samples(log, max_len=cfg.max_len, negative_ratio=cfg.negative_ratio, seed=cfg.data_seed)


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(
        seed=getattr(args, "seed", None),
        variant=getattr(args, "variant", None),
        out_dir=getattr(args, "out", None),
    )


def _metadata(started: float, **extra) -> dict:
    return {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started_unix": started,
        "wall_seconds": round(time.time() - started, 3),
        **extra,
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    """Simulate a log; write it plus ``.truth.json`` and ``.hourly.csv`` sidecars."""
    spec = load_synthetic_spec(args.config) if args.config else SyntheticSpec()
    if args.seed is not None:
        spec.seed = args.seed
    out = args.out or "synthetic.csv"
    _prepare_file(out, args.force)
    log, truth = generate_synthetic(spec)
    stem = os.path.splitext(out)[0]
    write_log(log, out)
    _write_json(stem + ".truth.json", truth.to_dict())

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["category", "hour", "count"])
    item_category = {item_name(k): spec.categories[c].name for k, c in enumerate(truth.item_category)}
    for cat in spec.categories:
        items = [k for k, iid in enumerate(log.item_ids) if item_category.get(iid) == cat.name]
        for hour, count in enumerate(hourly_histogram(log, items)):
            writer.writerow([cat.name, hour, int(count)])
    _write_text(stem + ".hourly.csv", buf.getvalue())
    print(f"wrote {len(log)} events for {log.n_users} users to {out}")
    return 0


def _train_into(cfg: ExperimentConfig, split: SampleSplit, run_dir: str) -> metrics.MetricReport:
    result = train(cfg, split.train, split.n_items)
    report = evaluate_model(result.model, split.test)
    ckpt = os.path.join(run_dir, CHECKPOINT_FILE)
    state = result.model.state_dict()
    save_checkpoint(ckpt, state)
    restored = load_checkpoint(ckpt)
    if restored.keys() != state.keys() or any(not np.array_equal(restored[k], state[k]) for k in state):
        raise CommandError(f"checkpoint {ckpt} does not read back identically")
    _write_text(os.path.join(run_dir, HISTORY_FILE), history_to_csv(result.history))
    _write_text(os.path.join(run_dir, REPORT_FILE), metrics.reports_to_csv({cfg.variant: report}))
    return report


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    run_dir = cfg.out_dir
    _prepare_dir(run_dir, args.force)
    started = time.time()
    try:
        save_config(os.path.join(run_dir, CONFIG_FILE), cfg)
        log, _ = load_dataset(cfg)
        split = build_split(cfg, log)
        report = _train_into(cfg, split, run_dir)
    except Exception as exc:
        _write_text(os.path.join(run_dir, FAILED_FILE), f"{type(exc).__name__}: {exc}\n")
        raise
    _write_json(os.path.join(run_dir, METADATA_FILE), _metadata(started, variant=cfg.variant))
    print(metrics.format_table({cfg.variant: report}))
    return 0


def _load_run(run_dir: str) -> tuple[ExperimentConfig, CTRModel, EventLog, SampleSplit]:
    cfg_path = os.path.join(run_dir, CONFIG_FILE)
    ckpt_path = os.path.join(run_dir, CHECKPOINT_FILE)
    if not os.path.isfile(ckpt_path):
        raise CommandError(f"no checkpoint at {ckpt_path}")
    if not os.path.isfile(cfg_path):
        raise CommandError(f"no config at {cfg_path}")
    cfg = load_config(cfg_path)
    log, _ = load_dataset(cfg)
    split = build_split(cfg, log)
    model = CTRModel(split.n_items, cfg.model_config(), cfg.variant, seed=cfg.seed)
    model.load_state_dict(load_checkpoint(ckpt_path))
    return cfg, model, log, split


def cmd_eval(args) -> int:
    """Re-score the test split with a saved run; CSV goes to ``--out`` or stdout."""
    cfg, model, _, split = _load_run(args.run)
    report = evaluate_model(model, split.test)
    text = metrics.reports_to_csv({cfg.variant: report})
    if args.out:
        _prepare_file(args.out, args.force)
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def ablation_csv(reports: dict[str, metrics.MetricReport]) -> str:
    """AUC table with DiCycle's relative improvement over each row."""
    top = reports[Variant.DICYCLE.value]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "auc", "gauc", "logloss", "dicycle_auc_rela_impr_pct"])
    for name, rep in reports.items():
        try:
            impr = f"{metrics.rela_impr(top.auc, rep.auc):.4f}"
        except DiCycleError:
            impr = "nan"
        writer.writerow([name, metrics.format_value(rep.auc), metrics.format_value(rep.gauc),
                         metrics.format_value(rep.logloss), impr])
    return buf.getvalue()


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out_dir = cfg.out_dir
    _prepare_dir(out_dir, args.force)
    started = time.time()
    timings = {}
    try:
        save_config(os.path.join(out_dir, CONFIG_FILE), cfg)
        log, _ = load_dataset(cfg)
        split = build_split(cfg, log)
        reports = {}
        for variant in ABLATIONS:
            t0 = time.time()
            sub = os.path.join(out_dir, variant.value)
            os.makedirs(sub)
            reports[variant.value] = _train_into(cfg.with_overrides(variant=variant.value), split, sub)
            timings[variant.value] = round(time.time() - t0, 3)
        _write_text(os.path.join(out_dir, "ablation.csv"), ablation_csv(reports))
    except Exception as exc:
        _write_text(os.path.join(out_dir, FAILED_FILE), f"{type(exc).__name__}: {exc}\n")
        raise
    _write_json(os.path.join(out_dir, METADATA_FILE), _metadata(started, seconds_per_variant=timings))
    print(metrics.format_table(reports))
    return 0


def select_probe_sample(log: EventLog, split: SampleSplit, user: Optional[str], item: Optional[str]):
    """The test positive of ``user`` (first eligible user by default), optionally retargeted to ``item``."""
    positives = [s for s in split.test if s.label == 1]
    if not positives:
        raise CommandError("the test split has no positive samples")
    if user is None:
        sample = positives[0]
    else:
        try:
            uid = log.user_ids.index(user)
        except ValueError:
            raise CommandError(f"unknown user {user!r}") from None
        matches = [s for s in positives if s.user == uid]
        if not matches:
            raise CommandError(f"user {user!r} has no test sample (fewer than two interactions)")
        sample = matches[0]
    if item is not None:
        try:
            target = log.item_ids.index(item) + 1
        except ValueError:
            raise CommandError(f"unknown item {item!r}") from None
        sample = type(sample)(sample.user, sample.behavior_items, sample.behavior_times, target,
                              sample.target_time, sample.label)
    return sample


def probe_csv(series: Sequence[tuple[int, float]]) -> str:
    lines = ["offset_hours,score"]
    lines += [f"{off / 3600:g},{score:.9f}" for off, score in series]
    return "\n".join(lines) + "\n"


def cmd_probe(args) -> int:
    """Sweep the target timestamp of one sample over ``--horizon`` hours."""
    _, model, log, split = _load_run(args.run)
    sample = select_probe_sample(log, split, args.user, args.item)
    if args.start is not None:
        sample = type(sample)(sample.user, sample.behavior_items, sample.behavior_times, sample.target_item,
                              int(args.start), sample.label)
    text = probe_csv(probe_timestamp_sweep(model, sample, args.horizon))
    if args.out:
        _prepare_file(args.out, args.force)
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dicycle", description="Time-cycle aware CTR model toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate a synthetic event log")
    gen.add_argument("--config", help="synthetic spec (TOML or JSON); defaults to the built-in spec")
    gen.add_argument("--out", help="output CSV path (default synthetic.csv)")
    gen.add_argument("--seed", type=int, help="override the spec seed")
    gen.add_argument("--force", action="store_true", help="overwrite existing outputs")
    gen.set_defaults(func=cmd_generate)

    for name, func, help_text in (("train", cmd_train, "train one variant into a run directory"),
                                  ("ablate", cmd_ablate, "train DiCycle and its three ablations")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config (TOML)")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="override the training seed")
        p.add_argument("--force", action="store_true", help="replace an existing output directory")
        if name == "train":
            p.add_argument("--variant", help="override the model variant")
        p.set_defaults(func=func)

    ev = sub.add_parser("eval", help="re-evaluate a saved run on its test split")
    ev.add_argument("--run", required=True, help="run directory written by train")
    ev.add_argument("--out", help="CSV path (default stdout)")
    ev.add_argument("--force", action="store_true")
    ev.set_defaults(func=cmd_eval)

    pr = sub.add_parser("probe", help="score one sample while sweeping its target time")
    pr.add_argument("--run", required=True, help="run directory written by train")
    pr.add_argument("--user", help="user id (default: first user with a test sample)")
    pr.add_argument("--item", help="item id to score instead of the user's test item")
    pr.add_argument("--horizon", type=int, default=72, help="hours to sweep (rows = horizon + 1)")
    pr.add_argument("--start", type=int, help="unix time of offset 0 (default: the sample's own time)")
    pr.add_argument("--out", help="CSV path (default stdout)")
    pr.add_argument("--force", action="store_true")
    pr.set_defaults(func=cmd_probe)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DiCycleError, OSError) as exc:
        print(f"dicycle {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
