"""Windowing, the joint reconstruction/contribution objective, and the fit loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import attention
from . import numcore as nc
from .attention import TAU_FLOOR
from .errors import ConfigError, InputError, NumericalError
from .model import ModelConfig, ModelParams, floor_tau, forward, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 10.0
    lr: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 10
    patience: int = 3
    val_fraction: float = 0.1
    seed: int = 0
    subsample_ratio: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if not 0.0 < self.subsample_ratio <= 1.0:
            raise ConfigError(f"subsample_ratio must lie in (0, 1], got {self.subsample_ratio}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")


def window_starts(length: int, win_size: int, training: bool = False) -> list[int]:
    """Start offsets of disjoint windows; inference adds one tail window ending at ``length``."""
    if length < win_size:
        raise InputError(f"series of length {length} is shorter than the window ({win_size})")
    n = length // win_size
    starts = [i * win_size for i in range(n)]
    if not training and length % win_size:
        starts.append(length - win_size)
    return starts


def make_windows(series, win_size: int, training: bool = False) -> np.ndarray:
    """Cut a ``(T, D)`` series into ``(N, win_size, D)`` windows."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 1:
        series = series[:, None]
    starts = window_starts(series.shape[0], win_size, training)
    return np.stack([series[s:s + win_size] for s in starts])


def loss_parts(x, x_hat, sacon_vec, lam: float):
    """Return ``(total, rec, attn)``.

    ``rec`` is the squared Frobenius reconstruction error and ``attn`` the summed
    contribution, both per window and averaged over any leading batch axis;
    ``total = rec - lam * attn``. ``sacon_vec`` may be None when ``lam == 0``.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    x, x_hat = nc.as_tensor(x), nc.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise InputError(f"x {x.shape} and x_hat {x_hat.shape} differ")
    n_windows = int(np.prod(x.shape[:-2])) if x.ndim > 2 else 1
    diff = x - x_hat
    rec = (diff * diff).sum() * (1.0 / n_windows)
    if sacon_vec is None:
        if lam != 0:
            raise InputError("a contribution vector is required when lambda > 0")
        return rec, rec, None
    sacon_vec = nc.as_tensor(sacon_vec)
    if sacon_vec.shape[-1] != x.shape[-2]:
        raise InputError(f"contribution length {sacon_vec.shape[-1]} != window {x.shape[-2]}")
    attn = sacon_vec.sum() * (1.0 / n_windows)
    return rec - attn * lam, rec, attn


def loss_total(x, x_hat, sacon_vec, lam: float):
    return loss_parts(x, x_hat, sacon_vec, lam)[0]


@dataclass
class EpochRecord:
    epoch: int
    loss_rec: float
    loss_attn: float
    loss_total: float
    val_loss: float
    mean_sacon: float


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    init_val_loss: float = float("nan")
    init_mean_sacon: float = float("nan")
    best_epoch: int = 0
    stopped_early: bool = False
    sacon_reads: int = 0
    n_train_windows: int = 0
    n_val_windows: int = 0

    COLUMNS = ("epoch", "loss_rec", "loss_attn", "loss_total", "val_loss", "mean_sacon")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.epochs:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in self.COLUMNS[1:]])

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("epochs")
        return d


def _validate(windows: np.ndarray, params: ModelParams, cfg: ModelConfig, lam: float,
              batch_size: int):
    """Mean per-window total loss and mean per-point contribution over ``windows``."""
    need = lam > 0
    loss_sum, sacon_sum = 0.0, 0.0
    with nc.no_grad():
        for i in range(0, len(windows), batch_size):
            xb = windows[i:i + batch_size]
            x_hat, state = forward(xb, params, cfg, need_sacon=need)
            s = state.mean_sacon()
            total, _, _ = loss_parts(xb, x_hat, s, lam)
            loss_sum += total.item() * len(xb)
            if need:
                sacon_sum += float(s.data.sum())
    n = len(windows)
    mean_sacon = sacon_sum / (n * cfg.win_size) if need else float("nan")
    return loss_sum / n, mean_sacon


def _series_of(dataset) -> np.ndarray:
    data = getattr(dataset, "train", dataset)
    data = np.asarray(data, dtype=np.float64)
    return data[:, None] if data.ndim == 1 else data


def split_windows(series: np.ndarray, win_size: int, cfg: TrainConfig):
    windows = make_windows(series, win_size, training=True)
    if cfg.subsample_ratio < 1.0:
        windows = windows[:max(2, math.ceil(cfg.subsample_ratio * len(windows)))]
    if len(windows) < 2:
        raise InputError(f"need at least 2 training windows, got {len(windows)}")
    n_val = min(len(windows) - 1, max(1, round(cfg.val_fraction * len(windows))))
    return windows[:-n_val], windows[-n_val:]


def fit(dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, params: ModelParams | None = None):
    """Train on ``dataset.train`` (or a raw ``(T, D)`` array).

    The last ``val_fraction`` of the training windows is held out; training stops
    after ``patience`` epochs without a lower validation loss, and the parameters
    from the best epoch are returned together with the :class:`TrainingLog`.
    """
    series = _series_of(dataset)
    if series.shape[1] != model_cfg.n_channels:
        raise InputError(f"data has {series.shape[1]} channels, model expects {model_cfg.n_channels}")
    train_w, val_w = split_windows(series, model_cfg.win_size, train_cfg)
    lam = float(train_cfg.lam)
    need = lam > 0

    rng = np.random.default_rng(train_cfg.seed)
    if params is None:
        params = init_params(model_cfg, train_cfg.seed)
    drop_rng = rng if model_cfg.dropout > 0 else None
    state = nc.AdamState(lr=train_cfg.lr)
    calls_before = attention.SACON_CALLS

    tlog = TrainingLog(n_train_windows=len(train_w), n_val_windows=len(val_w))
    tlog.init_val_loss, tlog.init_mean_sacon = _validate(val_w, params, model_cfg, lam,
                                                          train_cfg.batch_size)
    best_loss, best_params, bad = math.inf, params.copy(), 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(train_w))
        sums = np.zeros(3)
        for step, i in enumerate(range(0, len(order), train_cfg.batch_size)):
            xb = train_w[order[i:i + train_cfg.batch_size]]
            x_hat, st = forward(xb, params, model_cfg, need_sacon=need, rng=drop_rng)
            total, rec, attn = loss_parts(xb, x_hat, st.mean_sacon() if need else None, lam)
            if not np.isfinite(total.item()):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, step {step}",
                    {"epoch": epoch, "step": step, "loss_rec": rec.item(),
                     "loss_attn": attn.item() if attn is not None else 0.0,
                     "batch_mean": float(xb.mean()), "batch_std": float(xb.std()),
                     "batch_absmax": float(np.abs(xb).max())})
            total.backward()
            nc.adam_step(params.weights, {k: t.grad for k, t in params.items()}, state)
            floor_tau(params, TAU_FLOOR)
            nc.zero_grad(params.weights)
            sums += np.array([rec.item(), attn.item() if attn is not None else 0.0,
                              total.item()]) * len(xb)

        sums /= len(train_w)
        val_loss, mean_sacon = _validate(val_w, params, model_cfg, lam, train_cfg.batch_size)
        tlog.epochs.append(EpochRecord(epoch, *sums.tolist(), val_loss, mean_sacon))
        log.info("epoch %d rec=%.5g attn=%.5g total=%.5g val=%.5g sacon=%.4g",
                 epoch, *sums, val_loss, mean_sacon)
        if not np.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}",
                                 {"epoch": epoch, "val_loss": val_loss})
        if val_loss < best_loss:
            best_loss, best_params, bad = val_loss, params.copy(), 0
            tlog.best_epoch = epoch
        else:
            bad += 1
            if bad >= train_cfg.patience:
                tlog.stopped_early = True
                break

    tlog.sacon_reads = attention.SACON_CALLS - calls_before
    return best_params, tlog
