"""Per-timestep anomaly scores from a trained model.

Three layers of scoring are produced for every timestep:

* ``rec_error``: squared reconstruction error summed over channels;
* ``anomaly_score``: ``rec_error`` weighted by a window-local softmax of the
  negated sub-adjacent contribution, so poorly attended points are amplified;
* ``dyn_score``: the negative log tail probability of ``anomaly_score`` under a
  Gaussian fitted on a trailing window of past scores.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_ndtr

from . import numcore as nc
from .errors import ConfigError, InputError
from .model import ModelConfig, ModelParams, forward
from .train import window_starts

MODES = ("full", "raw_reconstruction")


@dataclass(frozen=True)
class ScoreConfig:
    mode: str = "full"
    gauss_window: int = 500
    sigma_floor: float = 1e-4
    use_sigma_squared: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown score mode {self.mode!r}; expected one of {MODES}")
        if self.gauss_window < 2:
            raise ConfigError(f"gauss_window must be >= 2, got {self.gauss_window}")
        if not self.sigma_floor > 0:
            raise ConfigError(f"sigma_floor must be positive, got {self.sigma_floor}")


def _softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def anomaly_score(window_x, window_x_hat, sacon_vec) -> np.ndarray:
    """``softmax(-sacon) * rec_error`` over the time axis of one window (or a batch)."""
    x, x_hat = np.asarray(window_x, float), np.asarray(window_x_hat, float)
    sacon_vec = np.asarray(sacon_vec, float)
    if x.shape != x_hat.shape:
        raise InputError(f"window shapes differ: {x.shape} vs {x_hat.shape}")
    rec = ((x - x_hat) ** 2).sum(axis=-1)
    if sacon_vec.shape != rec.shape:
        raise InputError(f"contribution shape {sacon_vec.shape} != error shape {rec.shape}")
    return _softmax(-sacon_vec, axis=-1) * rec


def _trailing(scores, window: int, centred: bool):
    s = np.asarray(scores, dtype=np.float64)
    padded = np.concatenate([np.full(window - 1, np.nan), s])
    first = np.empty_like(s)
    sd = np.empty_like(s)
    chunk = max(1, 4_000_000 // window)
    for lo in range(0, len(s), chunk):
        view = sliding_window_view(padded[lo:lo + chunk + window - 1], window)
        if centred:
            # deviations from the current value, so a flat window gives exactly zero
            view = view - s[lo:lo + chunk, None]
        first[lo:lo + chunk] = np.nanmean(view, axis=1)
        sd[lo:lo + chunk] = np.nanstd(view, axis=1)
    return first, sd


def trailing_stats(scores, window: int):
    """Mean and population std over ``scores[max(0, t-window+1): t+1]`` for each t."""
    return _trailing(scores, window, centred=False)


def trailing_deviation(scores, window: int):
    """``score_t - mu_t`` and ``sigma_t`` over the same trailing windows.

    Computed on values shifted by ``score_t``; this avoids the rounding left by
    subtracting two nearly equal means, which the squared-sigma form magnifies.
    """
    neg_dev, sd = _trailing(scores, window, centred=True)
    return -neg_dev, sd


def gaussian_tail_score(z) -> np.ndarray:
    """``-log(1 - Phi(z))`` evaluated as ``-log Phi(-z)`` to stay finite in the far tail."""
    return -log_ndtr(-np.asarray(z, dtype=np.float64))


def dynamic_gaussian(scores, cfg: ScoreConfig = ScoreConfig()) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise InputError(f"need a non-empty 1-D score series, got shape {scores.shape}")
    dev, sd = trailing_deviation(scores, cfg.gauss_window)
    sd = np.maximum(sd, cfg.sigma_floor)
    z = dev / (sd * sd if cfg.use_sigma_squared else sd)
    return gaussian_tail_score(z)


@dataclass
class ScoreSeries:
    rec_error: np.ndarray
    sacon: np.ndarray
    anomaly_score: np.ndarray
    dyn_score: np.ndarray
    mode: str = "full"
    labels: np.ndarray | None = None

    COLUMNS = ("t", "rec_error", "sacon", "anomaly_score", "dyn_score")

    def __len__(self):
        return len(self.rec_error)

    @property
    def column(self) -> str:
        """Name of the column that feeds thresholding and AUC."""
        return "dyn_score" if self.mode == "full" else "rec_error"

    @property
    def evaluated(self) -> np.ndarray:
        return getattr(self, self.column)

    def to_csv(self, path):
        cols = list(self.COLUMNS) + (["label"] if self.labels is not None else [])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for t in range(len(self)):
                row = [t] + [repr(float(getattr(self, c)[t])) for c in self.COLUMNS[1:]]
                if self.labels is not None:
                    row.append(int(self.labels[t]))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path, mode: str = "full") -> "ScoreSeries":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda c: np.array([float(r[c]) for r in rows])  # noqa: E731
        labels = np.array([int(r["label"]) for r in rows]) if rows and "label" in rows[0] else None
        return cls(col("rec_error"), col("sacon"), col("anomaly_score"), col("dyn_score"),
                   mode=mode, labels=labels)


def score_series(test_series, params: ModelParams, model_cfg: ModelConfig,
                 score_cfg: ScoreConfig = ScoreConfig(), labels=None,
                 batch_size: int = 64) -> ScoreSeries:
    """Window the series, reconstruct, and stitch per-window scores back to length T.

    The trailing window that overlaps its predecessor overwrites the overlap.
    Every column is filled in both modes; ``mode`` only selects ``evaluated``.
    """
    x = np.asarray(test_series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != model_cfg.n_channels:
        raise InputError(f"series has {x.shape[1]} channels, model expects {model_cfg.n_channels}")
    T, W = x.shape[0], model_cfg.win_size
    starts = window_starts(T, W, training=False)

    rec = np.empty(T)
    sac = np.empty(T)
    ano = np.empty(T)
    with nc.no_grad():
        for i in range(0, len(starts), batch_size):
            chunk = starts[i:i + batch_size]
            xb = np.stack([x[s:s + W] for s in chunk])
            x_hat, state = forward(xb, params, model_cfg, need_sacon=True)
            s_b = state.mean_sacon().data
            a_b = anomaly_score(xb, x_hat.data, s_b)
            r_b = ((xb - x_hat.data) ** 2).sum(axis=-1)
            for j, s in enumerate(chunk):
                rec[s:s + W] = r_b[j]
                sac[s:s + W] = s_b[j]
                ano[s:s + W] = a_b[j]

    dyn = dynamic_gaussian(ano, score_cfg)
    if labels is not None:
        labels = np.asarray(labels).astype(int)
        if len(labels) != T:
            raise InputError(f"{len(labels)} labels for a series of length {T}")
    return ScoreSeries(rec, sac, ano, dyn, mode=score_cfg.mode, labels=labels)
