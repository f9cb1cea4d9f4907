"""Train a small detector on the synthetic benchmark and evaluate it.

Run from the repository root:

    python3 demos/quickstart.py

Takes about 20 seconds on one core.
"""

from subadjacent import (MappingConfig, ModelConfig, ScoreConfig, SubAdjacentSpan, TrainConfig,
                         default_spec, evaluate, fit, generate_synthetic, normalize, score_series)

# 20K training points of a clean noisy sinusoid, 20K test points with about
# 22 % of them perturbed by five kinds of anomaly
raw = generate_synthetic(default_spec(seed=0))
ds = normalize(raw)  # train statistics are applied to both splits
print(f"test anomaly rate {raw.anomaly_rate:.4f}")

# a desk-sized model: windows of 100, attention rewarded on the 20..30 stripe
cfg = ModelConfig(n_channels=1, win_size=100, d_model=64, n_layers=2, n_heads=4,
                  span=SubAdjacentSpan(20, 30, 100), mapping=MappingConfig(normalize_rows=True))
params, log = fit(ds, cfg, TrainConfig(lam=10.0, lr=1e-3, batch_size=16, max_epochs=10))
for e in log.epochs:
    print(f"epoch {e.epoch:2d}  rec {e.loss_rec:9.4f}  val {e.val_loss:9.4f}  "
          f"contribution {e.mean_sacon:.4f}")

# every test point gets a reconstruction error, a contribution, a weighted
# score and a Gaussian tail score
series = score_series(ds.test, params, cfg, ScoreConfig(), labels=ds.test_labels)
for column in ("dyn_score", "anomaly_score", "rec_error"):
    rep = evaluate(getattr(series, column), ds.test_labels, score_column=column)
    print(f"{column:14s} adjusted F1 {rep.f1:.4f}  raw F1 {rep.raw_f1:.4f}  AUC {rep.auc:.4f}")
