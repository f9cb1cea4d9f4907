"""Datasets: CSV ingestion, per-channel standardisation, and a synthetic generator.

CSV layout: a header row naming the channels, optionally a ``label`` column
(0/1, required in the test file) and an ``entity`` column (any string; used only
for per-entity evaluation). One row per timestep, comma-delimited, UTF-8.

The synthetic generator reproduces the five anomaly families of the NeurIPS-TS
benchmark on a noisy sinusoid: global and contextual point outliers, and
shapelet, seasonal and trend pattern outliers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ContractError, InputError, SpecError

STD_FLOOR = 1e-8
ANOMALY_KINDS = ("global", "contextual", "shapelet", "seasonal", "trend")
POINT_KINDS = ("global", "contextual")


@dataclass(frozen=True)
class TimeSeriesDataset:
    name: str
    train: np.ndarray
    test: np.ndarray
    test_labels: np.ndarray | None
    channels: tuple
    mean: np.ndarray
    std: np.ndarray
    normalized: bool = False
    test_entities: np.ndarray | None = None

    def __post_init__(self):
        if self.train.ndim != 2 or self.test.ndim != 2:
            raise InputError("train and test must be (T, D) matrices")
        if self.train.shape[1] != self.test.shape[1]:
            raise InputError(
                f"train has {self.train.shape[1]} channels, test has {self.test.shape[1]}")
        if self.test_labels is not None and len(self.test_labels) != len(self.test):
            raise InputError(f"{len(self.test_labels)} labels for {len(self.test)} test rows")

    @property
    def n_channels(self) -> int:
        return self.train.shape[1]

    @property
    def anomaly_rate(self) -> float:
        return float(np.mean(self.test_labels)) if self.test_labels is not None else float("nan")


def channel_stats(train: np.ndarray):
    mean = train.mean(axis=0)
    std = np.maximum(train.std(axis=0), STD_FLOOR)
    return mean, std


def make_dataset(name, train, test, test_labels=None, channels=None, test_entities=None):
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if train.ndim == 1:
        train, test = train[:, None], test[:, None]
    if channels is None:
        channels = tuple(f"c{i}" for i in range(train.shape[1]))
    labels = None if test_labels is None else np.asarray(test_labels, dtype=np.int64)
    mean, std = channel_stats(train)
    return TimeSeriesDataset(name, train, test, labels, tuple(channels), mean, std,
                             test_entities=test_entities)


def normalize(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Standardise train and test with the train mean and floored train std."""
    if ds.normalized:
        raise ContractError(f"dataset {ds.name!r} is already normalized")
    return replace(ds, train=(ds.train - ds.mean) / ds.std, test=(ds.test - ds.mean) / ds.std,
                   normalized=True)


def denormalize(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    if not ds.normalized:
        raise ContractError(f"dataset {ds.name!r} is not normalized")
    return replace(ds, train=ds.train * ds.std + ds.mean, test=ds.test * ds.std + ds.mean,
                   normalized=False)


# -- CSV ---------------------------------------------------------------------------------
def _read_csv(path, label_column: str, need_label: bool, entity_column: str = "entity"):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if need_label and label_column not in header:
            raise InputError(f"{path}: missing label column {label_column!r}")
        li = header.index(label_column) if label_column in header else None
        ei = header.index(entity_column) if entity_column in header else None
        value_cols = [i for i in range(len(header)) if i not in (li, ei)]
        if not value_cols:
            raise InputError(f"{path}: no value columns")

        values, labels, entities = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for i in value_cols:
                try:
                    vals.append(float(row[i]))
                except ValueError:
                    raise InputError(
                        f"{path}:{lineno}: column {header[i]!r}: not a number: {row[i]!r}") from None
            values.append(vals)
            if li is not None:
                cell = row[li].strip()
                try:
                    lab = int(float(cell))
                except ValueError:
                    lab = -1
                if lab not in (0, 1):
                    raise InputError(
                        f"{path}:{lineno}: column {label_column!r}: label must be 0 or 1, got {cell!r}")
                labels.append(lab)
            if ei is not None:
                entities.append(row[ei])
    if not values:
        raise InputError(f"{path}: no data rows")
    return (np.array(values, dtype=np.float64), [header[i] for i in value_cols],
            np.array(labels, dtype=np.int64) if li is not None else None,
            np.array(entities) if ei is not None else None)


def load_csv(train_path, test_path, label_column: str = "label", name: str | None = None):
    """Read a train/test CSV pair. Constant channels are kept."""
    train, ch_train, _, _ = _read_csv(train_path, label_column, need_label=False)
    test, ch_test, labels, entities = _read_csv(test_path, label_column, need_label=True)
    if ch_train != ch_test:
        raise InputError(f"channel mismatch: train {ch_train} vs test {ch_test}")
    return make_dataset(name or str(test_path), train, test, labels, ch_train, entities)


def write_csv(path, values: np.ndarray, channels, labels=None, label_column: str = "label"):
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(channels) + ([label_column] if labels is not None else []))
        for t, row in enumerate(values):
            out = [repr(float(v)) for v in row]
            if labels is not None:
                out.append(int(labels[t]))
            w.writerow(out)


# -- synthetic generator -----------------------------------------------------------------
@dataclass(frozen=True)
class Anomaly:
    kind: str
    position: int
    span: int = 1
    magnitude: float = 1.0

    @property
    def end(self) -> int:
        return self.position + self.span


# magnitude meaning per kind:
#   global      offset from the global mean, in global std units
#   contextual  offset from the local mean, in local std units (result clipped to global range)
#   shapelet    square-wave amplitude, in multiples of the base amplitude
#   seasonal    frequency multiplier inside the segment
#   trend       drift reached at the segment end, in multiples of the base amplitude
DEFAULT_MAGNITUDE = {"global": 4.0, "contextual": 2.0, "shapelet": 1.0, "seasonal": 3.0,
                     "trend": 1.5}


@dataclass(frozen=True)
class SyntheticSpec:
    train_length: int = 20000
    test_length: int = 20000
    freq: float = 0.04
    amplitude: float = 1.5
    noise: float = 0.05
    anomalies: tuple = ()
    seed: int = 0
    context_radius: int = 25
    name: str = "synthetic"

    def __post_init__(self):
        if self.train_length < 1 or self.test_length < 1:
            raise SpecError("train_length and test_length must be >= 1")
        occupied = []
        for a in self.anomalies:
            if a.kind not in ANOMALY_KINDS:
                raise SpecError(f"unknown anomaly kind {a.kind!r}")
            if a.span < 1:
                raise SpecError(f"anomaly at {a.position} has span {a.span}")
            if a.kind in POINT_KINDS and a.span != 1:
                raise SpecError(f"{a.kind} anomalies are single points, got span {a.span}")
            if a.position < 0 or a.end > self.test_length:
                raise SpecError(f"anomaly [{a.position}, {a.end}) outside [0, {self.test_length})")
            occupied.append((a.position, a.end))
        occupied.sort()
        for (s0, e0), (s1, e1) in zip(occupied, occupied[1:]):
            if s1 < e0:
                raise SpecError(f"overlapping anomalies [{s0}, {e0}) and [{s1}, {e1})")

    @property
    def label_mass(self) -> int:
        return sum(a.span for a in self.anomalies)

    @property
    def anomaly_rate(self) -> float:
        return self.label_mass / self.test_length

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anomalies"] = [asdict(a) for a in self.anomalies]
        return d


def plan_anomalies(length: int, rate: float, seed: int = 0, point_share: float = 0.025,
                   min_span: int = 30, max_span: int = 70, min_gap: int = 20) -> tuple:
    """Lay out non-overlapping anomalies covering exactly ``round(rate * length)`` points.

    ``point_share`` of the labelled mass goes to single-point anomalies (split between
    global and contextual); the rest is pattern segments cycling through shapelet,
    seasonal and trend.
    """
    target = int(round(rate * length))
    if target == 0:
        return ()
    rng = np.random.default_rng(seed)
    n_points = min(target, int(round(point_share * target)))
    kinds = [("global" if i % 2 == 0 else "contextual", 1) for i in range(n_points)]
    remaining = target - n_points
    patterns = ("shapelet", "seasonal", "trend")
    spans = []
    while remaining > 0:
        span = int(rng.integers(min_span, max_span + 1))
        if remaining - span < min_span:
            span = remaining
        spans.append(span)
        remaining -= span
    kinds += [(patterns[i % 3], s) for i, s in enumerate(spans)]
    order = rng.permutation(len(kinds))
    kinds = [kinds[i] for i in order]

    free = length - target - (len(kinds) + 1) * min_gap
    if free < 0:
        raise SpecError(f"cannot fit {target} anomalous points with gaps into length {length}")
    cuts = np.sort(rng.integers(0, free + 1, size=len(kinds)))
    gaps = np.diff(np.concatenate([[0], cuts])) + min_gap
    out, pos = [], 0
    for (kind, span), gap in zip(kinds, gaps):
        pos += int(gap)
        out.append(Anomaly(kind, pos, span, DEFAULT_MAGNITUDE[kind]))
        pos += span
    return tuple(out)


def default_spec(seed: int = 0, rate: float = 0.2244, **kwargs) -> SyntheticSpec:
    """20K train / 20K test points with the benchmark's 22.44 % test anomaly rate."""
    length = kwargs.get("test_length", 20000)
    return SyntheticSpec(anomalies=plan_anomalies(length, rate, seed), seed=seed, **kwargs)


def spec_from_dict(d: dict) -> SyntheticSpec:
    """Build a spec from a parsed config; ``anomaly_rate`` plans anomalies when none are listed."""
    d = dict(d)
    rate = d.pop("anomaly_rate", None)
    anomalies = tuple(Anomaly(**a) for a in d.pop("anomalies", []))
    known = {f for f in SyntheticSpec.__dataclass_fields__}
    unknown = set(d) - known
    if unknown:
        raise SpecError(f"unknown spec fields: {sorted(unknown)}")
    if not anomalies and rate is not None:
        anomalies = plan_anomalies(d.get("test_length", 20000), float(rate), d.get("seed", 0))
    return SyntheticSpec(anomalies=anomalies, **d)


def load_spec(path) -> SyntheticSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            return spec_from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise SpecError(f"{path}: {exc}") from exc


def _sine(t, freq, amplitude):
    return amplitude * np.sin(2 * np.pi * freq * t)


def generate_synthetic(spec: SyntheticSpec) -> TimeSeriesDataset:
    """Noisy sinusoid train/test pair; anomalies are injected into the test part only."""
    rng = np.random.default_rng(spec.seed)
    t_train = np.arange(spec.train_length)
    t_test = np.arange(spec.train_length, spec.train_length + spec.test_length)
    train = _sine(t_train, spec.freq, spec.amplitude) + spec.noise * rng.standard_normal(len(t_train))
    noise = spec.noise * rng.standard_normal(len(t_test))
    base = _sine(t_test, spec.freq, spec.amplitude) + noise
    x = base.copy()
    labels = np.zeros(spec.test_length, dtype=np.int64)
    g_mean, g_std = base.mean(), base.std()
    lo, hi = base.min(), base.max()

    for a in spec.anomalies:
        s, e = a.position, a.end
        sign = 1.0 if rng.random() < 0.5 else -1.0
        if a.kind == "global":
            x[s] = g_mean + sign * a.magnitude * g_std
        elif a.kind == "contextual":
            r = spec.context_radius
            local = base[max(0, s - r):s + r + 1]
            l_mean, l_std = local.mean(), local.std()
            direction = -np.sign(base[s] - l_mean) or sign
            x[s] = np.clip(l_mean + direction * a.magnitude * l_std, lo, hi)
        elif a.kind == "shapelet":
            square = np.sign(np.sin(np.pi * spec.freq * t_test[s:e]))
            x[s:e] = a.magnitude * spec.amplitude * square + noise[s:e]
        elif a.kind == "seasonal":
            x[s:e] = _sine(t_test[s:e], spec.freq * a.magnitude, spec.amplitude) + noise[s:e]
        elif a.kind == "trend":
            x[s:e] = base[s:e] + sign * a.magnitude * spec.amplitude * np.linspace(0, 1, e - s)
        labels[s:e] = 1

    return make_dataset(spec.name, train[:, None], x[:, None], labels, ("value",))


def anomaly_rate_from_labels(labels) -> float:
    labels = np.asarray(labels)
    return float(labels.mean()) if labels.size else math.nan
