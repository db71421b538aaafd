"""Fixed-threshold gait detector on the window energy A = sum of squared samples."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from gaitsep.metrics import f1_from_counts


@dataclass(frozen=True)
class ThresholdModel:
    tau: float
    fit_f1: float

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau < 0:
            raise ValueError(f"tau must be finite and nonnegative, got {self.tau}")
        if not 0.0 <= self.fit_f1 <= 1.0:
            raise ValueError(f"fit_f1 must lie in [0, 1], got {self.fit_f1}")

    def dumps(self) -> str:
        return f"tau={self.tau!r} fit_f1={self.fit_f1!r}"

    @staticmethod
    def loads(text: str) -> "ThresholdModel":
        m = re.fullmatch(r"\s*tau=(\S+) fit_f1=(\S+)\s*", text)
        if not m:
            raise ValueError(f"cannot parse threshold model from {text!r}")
        return ThresholdModel(float(m.group(1)), float(m.group(2)))


def window_magnitude(window) -> float:
    """Sum over samples of ax^2 + ay^2 + az^2; no root, no averaging."""
    w = np.asarray(window, dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty window")
    return float(np.sum(w * w))


def window_magnitudes(windows) -> np.ndarray:
    """Vectorized ``window_magnitude`` over a ``(N, L, 3)`` batch."""
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim != 3 or w.shape[1] == 0:
        raise ValueError(f"expected (N, L, 3) windows with L >= 1, got {w.shape}")
    return np.einsum("nlc,nlc->n", w, w)


def detector_input(ws, raw: bool = False) -> np.ndarray:
    """Windows as seen by the detector: zero-centred, or with the removed means restored."""
    if not raw:
        return ws.data
    if ws.offsets is None:
        raise ValueError("raw-magnitude mode needs the per-window offsets removed at centering")
    return ws.data + ws.offsets[:, None, :]


def candidate_thresholds(magnitudes) -> np.ndarray:
    """0, midpoints of consecutive distinct sorted values, and max + 1, ascending."""
    u = np.unique(np.asarray(magnitudes, dtype=np.float64))
    mids = (u[:-1] + u[1:]) / 2.0
    return np.unique(np.concatenate([[0.0], mids, [u[-1] + 1.0]]))


def f1_at_thresholds(magnitudes, labels, taus) -> np.ndarray:
    """F1 of the rule ``A > tau`` for every tau in ``taus``."""
    a = np.asarray(magnitudes, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos = np.sort(a[y])
    neg = np.sort(a[~y])
    taus = np.asarray(taus, dtype=np.float64)
    tp = len(pos) - np.searchsorted(pos, taus, side="right")
    fp = len(neg) - np.searchsorted(neg, taus, side="right")
    fn = len(pos) - tp
    return f1_from_counts(tp, fp, fn)


def fit_threshold_magnitudes(magnitudes, labels) -> ThresholdModel:
    y = np.asarray(labels).astype(bool)
    if y.all() or not y.any():
        raise ValueError("threshold fitting needs both classes present")
    taus = candidate_thresholds(magnitudes)
    f1 = f1_at_thresholds(magnitudes, y, taus)
    k = int(np.argmax(f1))  # first maximum = smallest tau
    return ThresholdModel(float(taus[k]), float(f1[k]))


def fit_threshold(windows, labels) -> ThresholdModel:
    """Pick the candidate tau maximizing training F1; ties go to the smallest tau."""
    return fit_threshold_magnitudes(window_magnitudes(windows), labels)


def classify(window, model: ThresholdModel) -> int:
    """1 (gait) iff A > tau."""
    return int(window_magnitude(window) > model.tau)


def predict(windows, model: ThresholdModel) -> np.ndarray:
    return (window_magnitudes(windows) > model.tau).astype(np.int8)
