import csv
import math

import numpy as np
import pytest

from subadjacent import numcore as nc
from subadjacent import train as tr
from subadjacent.attention import MappingConfig, SubAdjacentSpan
from subadjacent.errors import ConfigError, InputError, NumericalError
from subadjacent.model import ModelConfig
from subadjacent.train import TrainConfig, fit, loss_parts, loss_total, make_windows, window_starts


def small_cfg(win=16, d=16, **kw):
    return ModelConfig(n_channels=1, win_size=win, d_model=d, n_layers=1, n_heads=2,
                       span=SubAdjacentSpan(2, 4, win), **kw)


def sine(n, seed=0):
    t = np.arange(n)
    return (np.sin(2 * np.pi * t / 8) + 0.05 * np.random.default_rng(seed).normal(size=n))[:, None]


def test_window_starts_cases():
    assert window_starts(300, 100) == [0, 100, 200]
    assert window_starts(250, 100) == [0, 100, 150]
    assert window_starts(250, 100, training=True) == [0, 100]
    with pytest.raises(InputError):
        window_starts(99, 100)


def test_make_windows_content():
    x = np.arange(10.0)
    w = make_windows(x, 4)
    assert w.shape == (3, 4, 1)
    np.testing.assert_array_equal(w[2, :, 0], [6, 7, 8, 9])
    assert make_windows(x, 4, training=True).shape == (2, 4, 1)


def test_loss_cases():
    x = np.zeros((2, 3))
    assert loss_total(x, x, np.zeros(2), 10.0).item() == 0.0
    total = loss_total(np.ones((2, 3)), np.zeros((2, 3)), np.array([0.5, 0.5]), 10.0)
    assert total.item() == pytest.approx(-4.0, abs=1e-15)
    rec_only = loss_total(np.ones((2, 3)), np.zeros((2, 3)), None, 0.0)
    assert rec_only.item() == 6.0
    with pytest.raises(ConfigError):
        loss_total(x, x, np.zeros(2), -1.0)
    with pytest.raises(InputError):
        loss_total(x, x, None, 1.0)
    with pytest.raises(InputError):
        loss_total(x, x, np.zeros(3), 1.0)


def test_loss_decomposes():
    rng = np.random.default_rng(0)
    x, xh, s = rng.normal(size=(4, 5, 2)), rng.normal(size=(4, 5, 2)), rng.random((4, 5))
    total, rec, attn = loss_parts(x, xh, s, 3.5)
    assert rec.item() >= 0
    assert total.item() == pytest.approx(rec.item() - 3.5 * attn.item(), rel=1e-14)
    assert rec.item() == pytest.approx(((x - xh) ** 2).sum() / 4, rel=1e-14)
    assert attn.item() == pytest.approx(s.sum() / 4, rel=1e-14)


def test_train_config_validation():
    for bad in [dict(lam=-1), dict(val_fraction=0.0), dict(val_fraction=1.0), dict(batch_size=0),
                dict(subsample_ratio=0.0), dict(lr=0.0)]:
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


@pytest.mark.parametrize("lam,normalize", [(0.0, False), (10.0, True)])
def test_constant_zero_series_reconstructs(lam, normalize):
    cfg = ModelConfig(n_channels=1, win_size=16, d_model=32, n_layers=1, n_heads=2,
                      span=SubAdjacentSpan(2, 4, 16), mapping=MappingConfig(normalize_rows=normalize))
    tc = TrainConfig(lam=lam, lr=1e-3, batch_size=4, max_epochs=10)
    _, log = fit(np.zeros((16 * 160, 1)), cfg, tc)
    assert min(e.loss_rec for e in log.epochs) < 1e-3


def test_contribution_grows_when_rewarded():
    cfg = small_cfg()
    _, log = fit(sine(16 * 30), cfg, TrainConfig(lam=10.0, lr=1e-3, batch_size=4, max_epochs=3))
    assert log.epochs[-1].mean_sacon > log.init_mean_sacon


def test_fit_is_deterministic(tmp_path):
    cfg = small_cfg()
    tc = TrainConfig(lam=10.0, lr=1e-3, batch_size=4, max_epochs=2, seed=3)
    p1, l1 = fit(sine(16 * 20), cfg, tc)
    p2, l2 = fit(sine(16 * 20), cfg, tc)
    l1.to_csv(tmp_path / "a.csv")
    l2.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for name, t in p1.items():
        np.testing.assert_array_equal(t.data, p2[name].data)


def test_lambda_zero_never_reads_contribution():
    cfg = small_cfg()
    _, log = fit(sine(16 * 20), cfg, TrainConfig(lam=0.0, lr=1e-3, batch_size=4, max_epochs=2))
    assert log.sacon_reads == 0
    assert all(math.isnan(e.mean_sacon) for e in log.epochs)
    _, log = fit(sine(16 * 20), cfg, TrainConfig(lam=1.0, lr=1e-3, batch_size=4, max_epochs=1))
    assert log.sacon_reads > 0


def test_non_finite_loss_raises_with_diagnostics():
    x = sine(16 * 10)
    x[40] = np.nan
    with pytest.raises(NumericalError) as err:
        fit(x, small_cfg(), TrainConfig(batch_size=4, max_epochs=1))
    d = err.value.diagnostics
    assert {"epoch", "step", "loss_rec", "batch_absmax"} <= set(d)


def test_log_csv_and_early_stopping(tmp_path):
    cfg = small_cfg()
    tc = TrainConfig(lam=10.0, lr=5e-2, batch_size=2, max_epochs=6, patience=1)
    params, log = fit(sine(16 * 20), cfg, tc)
    log.to_csv(tmp_path / "log.csv")
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert list(rows[0]) == list(tr.TrainingLog.COLUMNS)
    assert 1 <= len(rows) <= tc.max_epochs
    vals = [e.val_loss for e in log.epochs]
    assert log.best_epoch == int(np.argmin(vals)) + 1
    if log.stopped_early:
        assert vals[-1] >= min(vals[:-1])
    # the returned parameters are the best epoch's
    _, val_w = tr.split_windows(sine(16 * 20), 16, tc)
    val, _ = tr._validate(val_w, params, cfg, tc.lam, tc.batch_size)
    assert val == pytest.approx(min(vals), rel=1e-12)


def test_final_partial_batch_is_trained(monkeypatch):
    steps = []
    real = nc.adam_step
    monkeypatch.setattr(nc, "adam_step", lambda *a: steps.append(1) or real(*a))
    # 11 windows -> 1 validation, 10 training -> batches of 4, 4, 2
    _, log = fit(sine(16 * 11), small_cfg(), TrainConfig(batch_size=4, max_epochs=1))
    assert log.n_train_windows == 10 and log.n_val_windows == 1
    assert len(steps) == 3


def test_subsample_ratio():
    train_w, val_w = tr.split_windows(sine(16 * 40), 16, TrainConfig(subsample_ratio=0.5))
    assert len(train_w) + len(val_w) == 20


def test_channel_mismatch():
    with pytest.raises(InputError):
        fit(np.zeros((64, 2)), small_cfg(), TrainConfig())


def test_row_normalised_training_runs():
    cfg = small_cfg(mapping=MappingConfig(normalize_rows=True))
    _, log = fit(sine(16 * 20), cfg, TrainConfig(lr=1e-3, batch_size=4, max_epochs=2))
    assert all(np.isfinite(e.loss_total) for e in log.epochs)
