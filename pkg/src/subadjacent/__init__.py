"""Sub-adjacent attention anomaly detection for multivariate time series.

Quick tour::

    from subadjacent import data, model, train, score, evaluation
    ds = data.normalize(data.generate_synthetic(data.default_spec(seed=0)))
    cfg = model.ModelConfig(win_size=100, d_model=64, n_layers=2, n_heads=4)
    params, log = train.fit(ds, cfg, train.TrainConfig(lam=10.0))
    series = score.score_series(ds.test, params, cfg)
    print(evaluation.evaluate(series.evaluated, ds.test_labels).f1)
"""

from .attention import MappingConfig, SubAdjacentSpan, linear_attention, map_phi, sacon
from .data import (Anomaly, SyntheticSpec, TimeSeriesDataset, default_spec, generate_synthetic,
                   load_csv, normalize)
from .errors import (ConfigError, ContractError, DimensionError, EvaluationError, InputError,
                     NumericalError, SpecError, SubAdjacentError)
from .evaluation import (EvalReport, best_f1_threshold, evaluate, evaluate_entities, point_adjust,
                         roc_auc)
from .model import ModelConfig, ModelParams, forward, init_params, load_checkpoint, save_checkpoint
from .score import ScoreConfig, ScoreSeries, dynamic_gaussian, score_series
from .train import TrainConfig, TrainingLog, fit

__version__ = "0.1.0"
