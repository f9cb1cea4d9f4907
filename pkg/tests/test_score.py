import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from subadjacent.attention import MappingConfig, SubAdjacentSpan
from subadjacent.data import Anomaly, SyntheticSpec, generate_synthetic, normalize
from subadjacent.errors import ConfigError, InputError
from subadjacent.model import ModelConfig, init_params
from subadjacent.score import (ScoreConfig, ScoreSeries, anomaly_score, dynamic_gaussian,
                               gaussian_tail_score, score_series, trailing_deviation,
                               trailing_stats)
from subadjacent.train import TrainConfig, fit

from oracles import erf_based_tail, normal_sf_neglog


def test_uniform_contribution_divides_error():
    rng = np.random.default_rng(0)
    x, xh = rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
    rec = ((x - xh) ** 2).sum(-1)
    np.testing.assert_allclose(anomaly_score(x, xh, np.full(10, 0.3)), rec / 10, rtol=1e-14)


def test_zero_error_gives_zero_score():
    x = np.ones((5, 1))
    np.testing.assert_array_equal(anomaly_score(x, x, np.arange(5.0)), 0.0)


def test_low_contribution_point_scores_highest():
    out = anomaly_score(np.ones((4, 1)), np.zeros((4, 1)), [1.0, 1.0, 1.0, 0.0])
    e = np.exp([-1.0, -1.0, -1.0, 0.0])
    np.testing.assert_allclose(out, e / e.sum(), rtol=1e-14)
    np.testing.assert_allclose(out, [0.17488, 0.17488, 0.17488, 0.47537], atol=1e-5)
    assert out.sum() == pytest.approx(1.0, abs=1e-15)
    assert out[3] / out[0] == pytest.approx(np.e, rel=1e-14)
    assert out.argmax() == 3


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, st.integers(2, 30), elements=st.integers(0, 500), unique=True))
def test_score_order_is_reverse_contribution_order(ticks):
    # distinct on a 0.01 grid so exp() cannot round two of them together
    sacon = ticks / 100.0
    out = anomaly_score(np.ones((len(sacon), 1)), np.zeros((len(sacon), 1)), sacon)
    np.testing.assert_array_equal(np.argsort(out), np.argsort(-sacon))


def test_anomaly_score_shape_errors():
    with pytest.raises(InputError):
        anomaly_score(np.ones((4, 1)), np.ones((5, 1)), np.ones(4))
    with pytest.raises(InputError):
        anomaly_score(np.ones((4, 1)), np.ones((4, 1)), np.ones(3))


def test_trailing_stats_match_loop():
    s = np.random.default_rng(1).normal(size=57)
    mu, sd = trailing_stats(s, 10)
    for t in range(57):
        seg = s[max(0, t - 9):t + 1]
        assert mu[t] == pytest.approx(seg.mean(), abs=1e-12)
        assert sd[t] == pytest.approx(seg.std(), abs=1e-12)


def test_center_of_gaussian_is_log_two():
    assert gaussian_tail_score(0.0) == pytest.approx(np.log(2), abs=1e-15)
    for c in (3.7, 0.1, 1e6):
        for sq in (True, False):
            out = dynamic_gaussian(np.full(40, c), ScoreConfig(gauss_window=7, use_sigma_squared=sq))
            np.testing.assert_allclose(out, np.log(2), atol=1e-15)


def test_trailing_deviation_matches_loop():
    s = np.random.default_rng(8).normal(size=33)
    dev, sd = trailing_deviation(s, 6)
    for t in range(33):
        seg = s[max(0, t - 5):t + 1]
        assert dev[t] == pytest.approx(s[t] - seg.mean(), abs=1e-12)
        assert sd[t] == pytest.approx(seg.std(), abs=1e-12)


@pytest.mark.parametrize("z", [-8.0, -2.0, -0.3, 0.0, 0.7, 1.5, 3.0, 6.0, 10.0, 20.0, 35.0])
def test_tail_score_matches_high_precision(z):
    assert gaussian_tail_score(z) == pytest.approx(normal_sf_neglog(z), rel=1e-10, abs=1e-15)


def test_tail_score_agrees_with_erfc_where_that_is_finite():
    z = np.linspace(-5, 8, 40)
    np.testing.assert_allclose(gaussian_tail_score(z), [erf_based_tail(v) for v in z], rtol=1e-9)


def test_dynamic_score_monotone_in_z():
    z = np.sort(np.random.default_rng(2).uniform(-6, 40, 500))
    out = gaussian_tail_score(z)
    assert np.all(np.diff(out) > 0)
    ref = np.array([normal_sf_neglog(v) for v in z[::25]])
    np.testing.assert_allclose(out[::25], ref, rtol=1e-10)


def test_dynamic_score_nonnegative_and_large_in_tail():
    s = np.concatenate([np.random.default_rng(3).normal(0, 1.0, 300), [30.0]])
    out = dynamic_gaussian(s, ScoreConfig(gauss_window=100))
    assert (out >= 0).all()
    assert out.argmax() == 300
    seg = s[-100:]
    z = (30.0 - seg.mean()) / seg.std() ** 2
    assert out[-1] == pytest.approx(normal_sf_neglog(z), rel=1e-10)
    assert out[-1] > 6 * np.median(out)


def test_squared_sigma_warmup_is_scale_sensitive():
    # a few tiny scores at the start give sigma near the floor, and sigma**2 inflates z
    s = np.array([1e-4, 1.2e-4, 0.9e-4, 3e-4, 1.0, 1.1, 0.9, 1.0])
    printed = dynamic_gaussian(s, ScoreConfig(gauss_window=8))
    plain = dynamic_gaussian(s, ScoreConfig(gauss_window=8, use_sigma_squared=False))
    assert printed[3] > 1e3 and plain[3] < 5


def test_sigma_floor_applies():
    s = np.array([1.0, 1.0, 1.0, 1.0 + 1e-3])
    out = dynamic_gaussian(s, ScoreConfig(gauss_window=4, sigma_floor=1e-2, use_sigma_squared=False))
    mu, sd = s.mean(), max(s.std(), 1e-2)
    assert out[-1] == pytest.approx(normal_sf_neglog((s[-1] - mu) / sd), rel=1e-10)


def test_affine_invariance_only_without_square():
    s = np.abs(np.random.default_rng(4).normal(1.0, 0.5, 400))
    a, b = 7.5, 3.0
    plain = ScoreConfig(gauss_window=50, use_sigma_squared=False)
    np.testing.assert_allclose(dynamic_gaussian(s, plain), dynamic_gaussian(a * s + b, plain),
                               rtol=1e-9, atol=1e-12)
    printed = ScoreConfig(gauss_window=50)
    assert not np.allclose(dynamic_gaussian(s, printed), dynamic_gaussian(a * s + b, printed),
                           rtol=1e-3)


def test_score_config_validation():
    with pytest.raises(ConfigError):
        ScoreConfig(mode="fancy")
    with pytest.raises(ConfigError):
        ScoreConfig(gauss_window=1)
    with pytest.raises(ConfigError):
        ScoreConfig(sigma_floor=0.0)
    with pytest.raises(InputError):
        dynamic_gaussian(np.array([]))


def _tiny_model():
    cfg = ModelConfig(n_channels=1, win_size=16, d_model=8, n_layers=1, n_heads=2,
                      span=SubAdjacentSpan(2, 4, 16))
    return cfg, init_params(cfg, 0)


def test_score_series_shapes_and_modes(tmp_path):
    cfg, p = _tiny_model()
    x = np.random.default_rng(5).normal(size=(70, 1))
    labels = np.zeros(70, int)
    labels[30:33] = 1
    full = score_series(x, p, cfg, ScoreConfig(), labels=labels)
    raw = score_series(x, p, cfg, ScoreConfig(mode="raw_reconstruction"), labels=labels)
    assert len(full) == 70
    for col in ("rec_error", "sacon", "anomaly_score", "dyn_score"):
        assert np.isfinite(getattr(full, col)).all()
        np.testing.assert_array_equal(getattr(full, col), getattr(raw, col))
    assert (full.rec_error >= 0).all() and (full.dyn_score >= 0).all()
    assert full.column == "dyn_score" and raw.column == "rec_error"
    np.testing.assert_array_equal(raw.evaluated, raw.rec_error)

    full.to_csv(tmp_path / "s.csv")
    back = ScoreSeries.from_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.dyn_score, full.dyn_score)
    np.testing.assert_array_equal(back.labels, labels)
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header == "t,rec_error,sacon,anomaly_score,dyn_score,label"


def test_score_series_tail_window_wins():
    cfg, p = _tiny_model()
    x = np.random.default_rng(6).normal(size=(40, 1))
    out = score_series(x, p, cfg)
    tail = score_series(x[24:40], p, cfg)
    np.testing.assert_allclose(out.rec_error[24:], tail.rec_error, atol=1e-12)
    np.testing.assert_allclose(out.sacon[24:], tail.sacon, atol=1e-12)


def test_score_series_errors():
    cfg, p = _tiny_model()
    with pytest.raises(InputError):
        score_series(np.zeros((10, 1)), p, cfg)
    with pytest.raises(InputError):
        score_series(np.zeros((40, 2)), p, cfg)
    with pytest.raises(InputError):
        score_series(np.zeros((40, 1)), p, cfg, labels=np.zeros(39))


def test_global_anomaly_peaks_dynamic_score():
    spec = SyntheticSpec(train_length=4000, test_length=2000, freq=0.04, seed=1,
                         anomalies=(Anomaly("global", 1234, 1, 8.0),))
    ds = normalize(generate_synthetic(spec))
    cfg = ModelConfig(n_channels=1, win_size=50, d_model=16, n_layers=1, n_heads=2,
                      span=SubAdjacentSpan(10, 15, 50), mapping=MappingConfig(normalize_rows=True))
    params, _ = fit(ds, cfg, TrainConfig(lam=10.0, lr=1e-3, batch_size=8, max_epochs=4))
    assert ds.test_labels.sum() == 1
    s = score_series(ds.test, params, cfg, ScoreConfig(use_sigma_squared=False),
                     labels=ds.test_labels)
    for col in ("rec_error", "anomaly_score", "dyn_score"):
        assert ds.test_labels[int(getattr(s, col).argmax())] == 1, col
