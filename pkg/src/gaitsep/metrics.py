"""Confusion counts, thresholded metrics and average precision.

Gait is the positive class. Ratios whose denominator vanishes are reported
as ``None`` rather than zero.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

METRIC_FIELDS = ("accuracy", "specificity", "recall", "precision", "f1", "mcc", "gm", "cohen_kappa", "pr_auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricsReport:
    accuracy: float
    specificity: Optional[float]
    recall: Optional[float]
    precision: Optional[float]
    f1: Optional[float]
    mcc: Optional[float]
    gm: Optional[float]
    cohen_kappa: Optional[float]
    pr_auc: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(true_labels, predicted_labels, positive=1) -> ConfusionCounts:
    """Count outcomes with ``positive`` as the positive label."""
    t = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"label arrays must be 1-D and equal length, got {t.shape} and {p.shape}")
    if t.size == 0:
        raise ValueError("cannot compute a confusion matrix of zero samples")
    tpos = t == positive
    ppos = p == positive
    return ConfusionCounts(
        tp=int(np.sum(tpos & ppos)),
        tn=int(np.sum(~tpos & ~ppos)),
        fp=int(np.sum(~tpos & ppos)),
        fn=int(np.sum(tpos & ~ppos)),
    )


def _ratio(num, den):
    return None if den == 0 else num / den


def compute_metrics(counts: ConfusionCounts, pr_auc: Optional[float] = None) -> MetricsReport:
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    n = counts.total
    if n <= 0:
        raise ValueError("metrics need at least one evaluated window")
    ppv = _ratio(tp, tp + fp)
    tpr = _ratio(tp, tp + fn)
    tnr = _ratio(tn, tn + fp)
    acc = (tp + tn) / n
    if ppv is None or tpr is None or ppv + tpr == 0:
        f1 = None
    else:
        f1 = 2 * ppv * tpr / (ppv + tpr)
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = None if den == 0 else (tp * tn - fp * fn) / math.sqrt(den)
    gm = None if tpr is None or tnr is None else math.sqrt(tpr * tnr)
    p_e = ((tp + fn) * (tp + fp) + (tn + fp) * (tn + fn)) / (n * n)
    kappa = None if p_e == 1 else (acc - p_e) / (1 - p_e)
    return MetricsReport(acc, tnr, tpr, ppv, f1, mcc, gm, kappa, pr_auc)


def f1_from_counts(tp, fp, fn):
    """F1 as 2TP / (2TP + FP + FN); zero when there are no true positives.

    Vectorized over arrays of counts. Used inside threshold sweeps, where a
    threshold predicting no positives must score 0 rather than be skipped.
    """
    tp = np.asarray(tp, dtype=np.float64)
    den = 2 * tp + np.asarray(fp) + np.asarray(fn)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, 2 * tp / np.where(den > 0, den, 1), 0.0)
    return out if out.ndim else float(out)


def average_precision(scores, labels) -> float:
    """Area under the precision-recall curve as sum_n (R_n - R_{n-1}) P_n.

    Samples sharing a score enter the ranking together, so the result does
    not depend on input order.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equal length")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValueError("average precision needs both classes present")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp_cum = np.cumsum(y[order])
    # last index of each block of equal scores
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = tp_cum[ends].astype(np.float64)
    predicted = (ends + 1).astype(np.float64)
    precision = tp / predicted
    recall = tp / n_pos
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def aggregate(rows: list) -> dict:
    """Unweighted mean and population standard deviation per metric over folds.

    ``rows`` are MetricsReport objects or dicts. Undefined fold values are
    left out; ``n`` records how many folds contributed.
    """
    out = {}
    for name in METRIC_FIELDS:
        vals = [r.get(name) if isinstance(r, dict) else getattr(r, name) for r in rows]
        vals = [v for v in vals if v is not None]
        if not vals:
            out[name] = {"mean": None, "std": None, "n": 0}
            continue
        arr = np.asarray(vals, dtype=np.float64)
        out[name] = {"mean": float(arr.mean()), "std": float(arr.std(ddof=0)), "n": len(vals)}
    return out


def format_percent(value) -> str:
    """One-decimal percentage string; undefined values become "—"."""
    return "—" if value is None else f"{100.0 * value:.1f}"
