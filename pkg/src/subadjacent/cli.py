"""Command line entry points: ``generate``, ``train``, ``eval`` and ``sweep``.

A run is configured by a JSON file of flat dotted keys, for example::

    {"model.d_model": 64, "model.n_layers": 2, "train.lambda": 10, "span.k1": 20}

Every key is also a flag of the same name (``--train.lambda 0``). Precedence is
flag > environment > file > default; the environment only supplies the output
directory (``SUBADJACENT_OUT_DIR``).

Exit codes: 0 on success, 1 for input or configuration errors, 2 when training
hits a non-finite loss.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import resource
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .attention import KINDS, MappingConfig, SubAdjacentSpan
from .data import (TimeSeriesDataset, default_spec, generate_synthetic, load_csv, load_spec,
                   write_csv)
from .errors import ConfigError, InputError, NumericalError, SubAdjacentError
from .evaluation import evaluate, evaluate_entities
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .score import ScoreConfig, score_series
from .train import TrainConfig, fit

log = logging.getLogger("subadjacent")

OUT_DIR_ENV = "SUBADJACENT_OUT_DIR"
CHECKPOINT_NAME = "checkpoint.npz"
AXES = ("k1k2", "lambda", "window", "mapping")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text is None or str(text).lower() in ("", "none", "null") else int(text)


def _opt_str(text):
    return None if text is None else str(text)


# key -> (parser, default, help). Defaults follow the full-size training protocol.
KEYS = {
    "seed": (int, 0, "base seed for data generation, initialisation and shuffling"),
    "out_dir": (str, "runs", f"output directory (env {OUT_DIR_ENV})"),
    "data.train": (_opt_str, None, "training CSV; synthetic data is generated when unset"),
    "data.test": (_opt_str, None, "test CSV with a label column"),
    "data.spec": (_opt_str, None, "synthetic spec JSON used when no CSVs are given"),
    "data.label_column": (str, "label", "name of the label column"),
    "model.win_size": (int, 100, "window length"),
    "model.d_model": (int, 512, "hidden width"),
    "model.n_layers": (int, 3, "encoder layers"),
    "model.n_heads": (int, 8, "attention heads"),
    "model.d_ff": (_opt_int, None, "feed-forward width (default 4*d_model)"),
    "model.dropout": (float, 0.0, "dropout rate"),
    "span.k1": (int, 20, "inner edge of the sub-adjacent span"),
    "span.k2": (int, 30, "outer edge of the sub-adjacent span"),
    "mapping.kind": (str, "learnable_row_softmax", f"one of {', '.join(KINDS)}"),
    "mapping.tau_init": (float, 1.0, "initial softmax temperature"),
    "mapping.clamp_value": (float, -100.0, "value that replaces negatives before the softmax"),
    "mapping.normalize_rows": (_bool, False, "divide attention rows by their sums"),
    "mapping.power": (float, 3.0, "exponent for the power mapping"),
    "train.lambda": (float, 10.0, "weight of the attention term"),
    "train.lr": (float, 1e-4, "Adam learning rate"),
    "train.batch_size": (int, 128, "windows per step"),
    "train.max_epochs": (int, 10, "epoch budget"),
    "train.patience": (int, 3, "early-stopping patience"),
    "train.val_fraction": (float, 0.1, "held-out fraction of training windows"),
    "train.subsample_ratio": (float, 1.0, "fraction of training windows to keep"),
    "score.mode": (str, "full", "full or raw_reconstruction"),
    "score.gauss_window": (int, 500, "trailing window of the Gaussian score"),
    "score.sigma_floor": (float, 1e-4, "floor on the trailing std"),
    "score.use_sigma_squared": (_bool, True, "divide by sigma squared instead of sigma"),
    "eval.point_adjust": (_bool, True, "apply point adjustment"),
    "eval.entity_average": (_bool, False, "average metrics over the test entity column"),
}


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KEYS[key][0](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return {k: _coerce(k, v) for k, v in _flatten(raw).items()}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in KEYS.items()})

    @classmethod
    def resolve(cls, file_values=None, cli_values=None, env=None) -> "RunConfig":
        env = os.environ if env is None else env
        values = {k: v[1] for k, v in KEYS.items()}
        values.update(file_values or {})
        if env.get(OUT_DIR_ENV):
            values["out_dir"] = env[OUT_DIR_ENV]
        for k, v in (cli_values or {}).items():
            if v is not None:
                values[k] = _coerce(k, v)
        return cls(values)

    def __getitem__(self, key):
        return self.values[key]

    def replace(self, **updates) -> "RunConfig":
        v = dict(self.values)
        for k, val in updates.items():
            v[k.replace("__", ".")] = val
        return RunConfig(v)

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    def model_config(self, n_channels: int) -> ModelConfig:
        v = self.values
        win = v["model.win_size"]
        return ModelConfig(
            n_channels=n_channels, win_size=win, d_model=v["model.d_model"],
            n_layers=v["model.n_layers"], n_heads=v["model.n_heads"], d_ff=v["model.d_ff"],
            dropout=v["model.dropout"], span=SubAdjacentSpan(v["span.k1"], v["span.k2"], win),
            mapping=MappingConfig(kind=v["mapping.kind"], clamp_value=v["mapping.clamp_value"],
                                  tau_init=v["mapping.tau_init"],
                                  normalize_rows=v["mapping.normalize_rows"],
                                  power=v["mapping.power"]))

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(lam=v["train.lambda"], lr=v["train.lr"], batch_size=v["train.batch_size"],
                           max_epochs=v["train.max_epochs"], patience=v["train.patience"],
                           val_fraction=v["train.val_fraction"], seed=v["seed"],
                           subsample_ratio=v["train.subsample_ratio"])

    def score_config(self) -> ScoreConfig:
        v = self.values
        mode = "raw_reconstruction" if v["score.mode"] == "raw" else v["score.mode"]
        return ScoreConfig(mode=mode, gauss_window=v["score.gauss_window"],
                           sigma_floor=v["score.sigma_floor"],
                           use_sigma_squared=v["score.use_sigma_squared"])

    def validate(self):
        for key in ("data.train", "data.test", "data.spec"):
            p = self.values[key]
            if p is not None and not Path(p).is_file():
                raise InputError(f"{key}: no such file {p}")
        if (self.values["data.train"] is None) != (self.values["data.test"] is None):
            raise ConfigError("data.train and data.test must be given together")
        self.train_config()
        self.score_config()
        return self


# -- helpers -----------------------------------------------------------------------------
def load_data(cfg: RunConfig) -> TimeSeriesDataset:
    """CSV pair when configured, otherwise the synthetic benchmark.

    A spec file carries its own seed; without one the run seed picks the layout.
    """
    if cfg["data.train"] is not None:
        return load_csv(cfg["data.train"], cfg["data.test"], cfg["data.label_column"])
    spec = load_spec(cfg["data.spec"]) if cfg["data.spec"] else default_spec(seed=cfg["seed"])
    return generate_synthetic(spec)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class _Resources:
    """Wall-clock and peak resident memory around one command."""

    def __init__(self, label: str):
        self.label = label

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0
        # ru_maxrss is KiB on Linux
        self_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        child_kb = resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss
        self.peak_mib = max(self_kb, child_kb) / 1024.0
        if exc[0] is None:
            print(f"[{self.label}] wall-clock {self.seconds:.2f} s, peak RSS {self.peak_mib:.1f} MiB")
        return False

    def as_dict(self) -> dict:
        return {"command": self.label, "wall_seconds": self.seconds, "peak_rss_mib": self.peak_mib}


def _provenance(cfg: RunConfig | None, **extra) -> dict:
    out = {"package_version": __version__, "numpy": np.__version__,
           "python": platform.python_version()}
    if cfg is not None:
        out["config"] = dict(sorted(cfg.values.items()))
    out.update(extra)
    return out


# -- commands ----------------------------------------------------------------------------
def cmd_generate(spec_path=None, out_dir="runs", seed: int | None = None) -> dict:
    """Write ``train.csv``, ``test.csv`` and ``provenance.json`` for a synthetic spec."""
    if spec_path is not None:
        spec = load_spec(spec_path)
        if seed is not None and seed != spec.seed:
            spec = replace(spec, seed=seed)
    else:
        spec = default_spec(seed=0 if seed is None else seed)
    ds = generate_synthetic(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "train.csv", ds.train, ds.channels)
    write_csv(out / "test.csv", ds.test, ds.channels, labels=ds.test_labels)
    prov = _provenance(None, spec=spec.to_dict(), seed=spec.seed,
                       anomaly_rate=float(ds.test_labels.mean()),
                       train_rows=len(ds.train), test_rows=len(ds.test))
    _write_json(out / "provenance.json", prov)
    print(f"wrote {len(ds.train)} train and {len(ds.test)} test rows to {out} "
          f"(anomaly rate {prov['anomaly_rate']:.4f})")
    return prov


def cmd_train(cfg: RunConfig):
    """Fit a model; writes the checkpoint, ``train_log.csv`` and ``provenance.json``."""
    cfg.validate()
    raw = load_data(cfg)
    ds = _normalized(raw, raw.mean, raw.std)
    model_cfg = cfg.model_config(ds.n_channels)
    params, tlog = fit(ds, model_cfg, cfg.train_config())
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    extra = {"mean": raw.mean.tolist(), "std": raw.std.tolist(), "channels": list(raw.channels),
             "seed": cfg["seed"], "best_epoch": tlog.best_epoch}
    ckpt = out / CHECKPOINT_NAME
    save_checkpoint(ckpt, params, model_cfg, extra)
    tlog.to_csv(out / "train_log.csv")
    _write_json(out / "provenance.json",
                _provenance(cfg, dataset=raw.name, training=tlog.summary(),
                            n_parameters=params.n_parameters()))
    best = tlog.epochs[tlog.best_epoch - 1] if tlog.best_epoch else None
    print(f"trained {len(tlog.epochs)} epochs, best epoch {tlog.best_epoch}"
          + (f", val loss {best.val_loss:.6g}" if best else "") + f" -> {ckpt}")
    return ckpt, tlog


def _normalized(ds: TimeSeriesDataset, mean, std) -> TimeSeriesDataset:
    mean, std = np.asarray(mean, float), np.asarray(std, float)
    if mean.shape != (ds.n_channels,):
        raise InputError(f"checkpoint was trained on {mean.shape[0]} channels, "
                         f"data has {ds.n_channels}")
    return replace(ds, train=(ds.train - mean) / std, test=(ds.test - mean) / std,
                   mean=mean, std=std, normalized=True)


def _entity_pairs(scores, labels, entities):
    if entities is None:
        raise InputError("--entity-average needs an 'entity' column in the test CSV")
    names = list(dict.fromkeys(entities.tolist()))
    return [(scores[entities == n], labels[entities == n]) for n in names], names


def cmd_eval(cfg: RunConfig, checkpoint=None):
    """Score the test split and pick the best-F1 threshold.

    Writes ``scores.csv`` and ``report.json`` and returns ``(report dict, ScoreSeries)``.
    """
    cfg.validate()
    ckpt = Path(checkpoint) if checkpoint is not None else cfg.out_dir / CHECKPOINT_NAME
    if not ckpt.is_file():
        raise InputError(f"no checkpoint at {ckpt}")
    params, model_cfg, extra = load_checkpoint(ckpt)
    raw = load_data(cfg)
    ds = _normalized(raw, extra["mean"], extra["std"])
    if ds.test_labels is None:
        raise InputError("test data has no labels")
    score_cfg = cfg.score_config()
    series = score_series(ds.test, params, model_cfg, score_cfg, labels=ds.test_labels)
    adjust = cfg["eval.point_adjust"]

    if cfg["eval.entity_average"]:
        pairs, names = _entity_pairs(series.evaluated, ds.test_labels, ds.test_entities)
        summary, reports = evaluate_entities(pairs, adjust, mode="average",
                                             score_column=series.column)
        report = {"aggregation": "entity_average", "score_column": series.column,
                  "adjusted": adjust, **summary,
                  "entities": {n: r.to_dict() for n, r in zip(names, reports)}}
        f1 = summary["f1"] if adjust else summary["raw_f1"]
    else:
        r = evaluate(series.evaluated, ds.test_labels, adjust, series.column)
        report = {"aggregation": "none", **r.to_dict()}
        f1 = r.best_f1

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    series.to_csv(out / "scores.csv")
    _write_json(out / "report.json", report)
    print(f"{series.column}: F1 {f1:.4f}"
          + (f", AUC {report['auc']:.4f}" if "auc" in report else "")
          + (" (point-adjusted)" if adjust else " (no point adjustment)"))
    return report, series


def _apply_axis(cfg: RunConfig, axis: str, value: str) -> RunConfig:
    if axis == "k1k2":
        k1, _, k2 = value.partition(":")
        return cfg.replace(span__k1=int(k1), span__k2=int(k2 or k1))
    if axis == "lambda":
        return cfg.replace(train__lambda=float(value))
    if axis == "window":
        return cfg.replace(model__win_size=int(value))
    if axis == "mapping":
        return cfg.replace(mapping__kind=value)
    raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {AXES}")


SWEEP_COLUMNS = ("axis", "value", "status", "f1", "precision", "recall", "auc", "threshold",
                 "raw_f1", "best_epoch", "error")


def _sweep_point(cfg: RunConfig, axis: str, value: str) -> dict:
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    row.update(axis=axis, value=value)
    try:
        point = _apply_axis(cfg, axis, value)
        point = point.replace(out_dir=str(cfg.out_dir / f"{axis}={value.replace(':', '-')}"))
        _, tlog = cmd_train(point)
        report, _ = cmd_eval(point)
        f1 = report["f1"] if point["eval.point_adjust"] else report["raw_f1"]
        row.update(status="ok", f1=f1, precision=report["precision"], recall=report["recall"],
                   auc=report["auc"], threshold=report.get("threshold", ""),
                   raw_f1=report["raw_f1"], best_epoch=tlog.best_epoch)
    except (SubAdjacentError, ValueError, ArithmeticError, OSError) as exc:
        log.warning("sweep point %s=%s failed: %s", axis, value, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def cmd_sweep(cfg: RunConfig, axis: str, values, workers: int = 1) -> list:
    """Train and evaluate one model per value; writes ``sweep.csv``. Failures become rows."""
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    values = [str(v).strip() for v in values if str(v).strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    cfg.validate()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, [cfg] * len(values), [axis] * len(values), values))
    else:
        rows = [_sweep_point(cfg, axis, v) for v in values]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in SWEEP_COLUMNS])
    for r in rows:
        shown = f"F1 {r['f1']:.4f}" if r["status"] == "ok" else r["error"]
        print(f"{axis}={r['value']}: {r['status']} {shown}")
    return rows


# -- argument parsing ----------------------------------------------------------------------
def _add_key_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file of dotted keys")
    g = p.add_argument_group("configuration keys")
    for key, (_, default, help_) in KEYS.items():
        g.add_argument(f"--{key}", dest=key, default=None, metavar="V",
                       help=f"{help_} (default {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subadjacent", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic train/test pair")
    g.add_argument("--spec", help="synthetic spec JSON (default: built-in benchmark layout)")
    g.add_argument("--out-dir", default=None)
    g.add_argument("--seed", type=int, default=None)

    t = sub.add_parser("train", help="fit a model and write a checkpoint")
    _add_key_flags(t)

    e = sub.add_parser("eval", help="score test data and report F1/AUC")
    _add_key_flags(e)
    e.add_argument("--checkpoint", help=f"default: <out_dir>/{CHECKPOINT_NAME}")
    e.add_argument("--mode", choices=("full", "raw", "raw_reconstruction"), default=None)
    e.add_argument("--no-point-adjust", action="store_true")
    e.add_argument("--entity-average", action="store_true")

    s = sub.add_parser("sweep", help="train and evaluate over one config axis")
    _add_key_flags(s)
    s.add_argument("--axis", required=True, choices=AXES)
    s.add_argument("--values", required=True, help="comma-separated, e.g. 0:0,20:30")
    s.add_argument("--workers", type=int, default=1)
    return parser


def _run_config(args) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    cli = {k: getattr(args, k) for k in KEYS}
    if getattr(args, "mode", None):
        cli["score.mode"] = args.mode
    if getattr(args, "no_point_adjust", False):
        cli["eval.point_adjust"] = False
    if getattr(args, "entity_average", False):
        cli["eval.entity_average"] = True
    return RunConfig.resolve(file_values, cli)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with _Resources(args.command) as res:
            if args.command == "generate":
                out = args.out_dir or os.environ.get(OUT_DIR_ENV) or KEYS["out_dir"][1]
                cmd_generate(args.spec, out, args.seed)
            else:
                cfg = _run_config(args)
                if args.command == "train":
                    cmd_train(cfg)
                elif args.command == "eval":
                    cmd_eval(cfg, args.checkpoint)
                else:
                    cmd_sweep(cfg, args.axis, args.values.split(","), args.workers)
            out_dir = Path(out if args.command == "generate" else cfg.out_dir)
        _write_json(out_dir / f"resources_{args.command}.json", res.as_dict())
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics, sort_keys=True), file=sys.stderr)
        return 2
    except (SubAdjacentError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
