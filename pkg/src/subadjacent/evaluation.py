"""Point adjustment, best-F1 threshold search and ROC-AUC."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import EvaluationError, InputError


def _binary(x, name) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1:
        raise InputError(f"{name} must be 1-D, got shape {x.shape}")
    if x.size and not np.isin(x, (0, 1)).all():
        raise InputError(f"{name} must be binary")
    return x.astype(np.int64)


def segments(truth) -> list[tuple[int, int]]:
    """Maximal runs of ones as half-open ``(start, end)`` pairs."""
    t = np.concatenate([[0], _binary(truth, "truth"), [0]])
    edges = np.flatnonzero(np.diff(t))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def point_adjust(pred, truth) -> np.ndarray:
    """Mark a whole true anomaly segment as detected once any point in it is predicted."""
    pred, truth = _binary(pred, "pred"), _binary(truth, "truth")
    if pred.shape != truth.shape:
        raise InputError(f"pred has length {len(pred)}, truth has length {len(truth)}")
    out = pred.copy()
    for s, e in segments(truth):
        if out[s:e].any():
            out[s:e] = 1
    return out


def confusion(pred, truth) -> dict:
    pred, truth = _binary(pred, "pred"), _binary(truth, "truth")
    tp = int(((pred == 1) & (truth == 1)).sum())
    fp = int(((pred == 1) & (truth == 0)).sum())
    fn = int(((pred == 0) & (truth == 1)).sum())
    return {"tp": tp, "fp": fp, "fn": fn, "tn": len(truth) - tp - fp - fn}


def prf(tp: int, fp: int, fn: int):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return precision, recall, f1


@dataclass
class EvalReport:
    threshold: float
    adjusted: bool
    precision: float
    recall: float
    f1: float
    raw_precision: float
    raw_recall: float
    raw_f1: float
    auc: float
    tp: int
    fp: int
    fn: int
    tn: int
    raw_tp: int
    raw_fp: int
    raw_fn: int
    raw_tn: int
    score_column: str = ""

    @property
    def best_f1(self) -> float:
        """The F1 the threshold was chosen for."""
        return self.f1 if self.adjusted else self.raw_f1

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(f.name for f in fields(cls))

    def to_csv_row(self) -> str:
        buf = io.StringIO()
        vals = [repr(v) if isinstance(v, float) else v for v in asdict(self).values()]
        csv.writer(buf, lineterminator="").writerow(vals)
        return buf.getvalue()


def _check(scores, truth):
    scores = np.asarray(scores, dtype=np.float64)
    truth = _binary(truth, "truth")
    if scores.shape != truth.shape:
        raise InputError(f"scores has length {len(scores)}, truth has length {len(truth)}")
    if not np.all(np.isfinite(scores)):
        raise InputError("scores must be finite")
    n_pos = int(truth.sum())
    if n_pos == 0 or n_pos == len(truth):
        raise EvaluationError("truth needs at least one positive and one negative label")
    return scores, truth


def report_at(scores, truth, threshold: float, adjusted: bool = True, auc: float | None = None,
              score_column: str = "") -> EvalReport:
    """Metrics for the prediction ``scores >= threshold``, with and without adjustment."""
    scores, truth = _check(scores, truth)
    raw = (scores >= threshold).astype(np.int64)
    c_pa = confusion(point_adjust(raw, truth), truth)
    c_raw = confusion(raw, truth)
    p, r, f = prf(c_pa["tp"], c_pa["fp"], c_pa["fn"])
    rp, rr, rf = prf(c_raw["tp"], c_raw["fp"], c_raw["fn"])
    if auc is None:
        auc = roc_auc(scores, truth)
    return EvalReport(float(threshold), adjusted, p, r, f, rp, rr, rf, float(auc),
                      c_pa["tp"], c_pa["fp"], c_pa["fn"], c_pa["tn"],
                      c_raw["tp"], c_raw["fp"], c_raw["fn"], c_raw["tn"], score_column)


def f1_curve(scores, truth, adjust: bool = True):
    """F1 at every distinct score used as threshold (``score >= threshold``).

    Returns ``(thresholds ascending, f1)``. Under adjustment a segment counts as
    fully detected exactly when its maximum score clears the threshold.
    """
    scores, truth = _check(scores, truth)
    thresholds = np.unique(scores)
    neg_sorted = np.sort(scores[truth == 0])
    fp = len(neg_sorted) - np.searchsorted(neg_sorted, thresholds, side="left")
    n_pos = int(truth.sum())
    if adjust:
        segs = segments(truth)
        seg_max = np.array([scores[s:e].max() for s, e in segs])
        seg_len = np.array([e - s for s, e in segs])
        order = np.argsort(seg_max)
        seg_max, cum = seg_max[order], np.concatenate([[0], np.cumsum(seg_len[order])])
        below = np.searchsorted(seg_max, thresholds, side="left")
        tp = n_pos - cum[below]
    else:
        pos_sorted = np.sort(scores[truth == 1])
        tp = len(pos_sorted) - np.searchsorted(pos_sorted, thresholds, side="left")
    fn = n_pos - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(tp > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return thresholds, f1


def best_f1_threshold(scores, truth, adjust: bool = True, score_column: str = ""):
    """Threshold maximising F1; ties go to the larger threshold. Returns ``(threshold, report)``."""
    thresholds, f1 = f1_curve(scores, truth, adjust)
    best = np.flatnonzero(f1 == f1.max())[-1]
    threshold = float(thresholds[best])
    return threshold, report_at(scores, truth, threshold, adjust, score_column=score_column)


def roc_auc(scores, truth) -> float:
    """Trapezoidal area under the ROC curve; tied scores move along one diagonal step."""
    scores, truth = _check(scores, truth)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], truth[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last_of_group]
    fps = (last_of_group + 1) - tps
    tpr = np.r_[0.0, tps / tps[-1]]
    fpr = np.r_[0.0, fps / fps[-1]]
    return float(np.trapezoid(tpr, fpr))


def evaluate(scores, truth, adjust: bool = True, score_column: str = "") -> EvalReport:
    return best_f1_threshold(scores, truth, adjust, score_column)[1]


def evaluate_entities(pairs, adjust: bool = True, mode: str = "concat", score_column: str = ""):
    """Evaluate several ``(scores, truth)`` entities.

    ``concat`` joins them into one series first; ``average`` evaluates each on its
    own and averages precision/recall/F1/AUC. Returns ``(summary, reports)``.
    Entities whose labels are all one class are skipped in ``average`` mode.
    """
    pairs = list(pairs)
    if mode == "concat":
        s = np.concatenate([np.asarray(p[0], float) for p in pairs])
        t = np.concatenate([np.asarray(p[1]) for p in pairs])
        report = evaluate(s, t, adjust, score_column)
        return report.to_dict(), [report]
    if mode != "average":
        raise InputError(f"unknown aggregation mode {mode!r}")
    reports = []
    for s, t in pairs:
        t = np.asarray(t)
        if t.sum() in (0, len(t)):
            continue
        reports.append(evaluate(s, t, adjust, score_column))
    if not reports:
        raise EvaluationError("no entity has both normal and anomalous labels")
    mean = {k: float(np.mean([getattr(r, k) for r in reports]))
            for k in ("precision", "recall", "f1", "raw_precision", "raw_recall", "raw_f1", "auc")}
    return mean, reports
