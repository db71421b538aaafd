"""Training loop: AdamW with decoupled decay, class-balanced loss, callbacks on
validation PR-AUC, and decision-threshold calibration."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from gaitsep import _alloc
from gaitsep import kernels as K
from gaitsep import models as M
from gaitsep.metrics import average_precision, f1_from_counts

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    max_epochs: int = 300
    batch_size: int = 256
    early_stop_patience: int = 12
    rlrop_factor: float = 0.2
    rlrop_patience: int = 7
    min_learning_rate: float = 1e-5
    class_balance_beta: float = 0.999
    seed: int = 12
    threshold_sweep_points: int = 401

    def __post_init__(self):
        for name in ("learning_rate", "epsilon", "min_learning_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not 0 < self.rlrop_factor < 1:
            raise ValueError("rlrop_factor must lie in (0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and 0 < self.class_balance_beta < 1):
            raise ValueError("betas must lie in [0, 1)")
        for name in ("max_epochs", "batch_size", "early_stop_patience", "rlrop_patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.threshold_sweep_points < 2:
            raise ValueError("threshold_sweep_points must be >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# --- class weights ------------------------------------------------------------------


@dataclass(frozen=True)
class ClassWeights:
    w0: float
    w1: float
    n0: int
    n1: int
    beta: float

    def per_sample(self, labels) -> np.ndarray:
        return np.where(np.asarray(labels) == 1, self.w1, self.w0)


def effective_number(n: int, beta: float) -> float:
    """(1 - beta^n) / (1 - beta), with beta^n taken in log space."""
    return -math.expm1(n * math.log(beta)) / (1.0 - beta)


def compute_class_weights(n0: int, n1: int, beta: float = 0.999) -> ClassWeights:
    """Inverse effective numbers, rescaled to unit average weight per sample."""
    if n0 < 1 or n1 < 1:
        raise ValueError(f"both classes need at least one sample, got n0={n0}, n1={n1}")
    w0 = 1.0 / effective_number(n0, beta)
    w1 = 1.0 / effective_number(n1, beta)
    norm = (w0 * n0 + w1 * n1) / (n0 + n1)
    return ClassWeights(w0 / norm, w1 / norm, int(n0), int(n1), beta)


# --- optimizer -------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)  # (layer, name) -> first moment
    v: dict = field(default_factory=dict)  # (layer, name) -> second moment
    t: int = 0

    def copy(self) -> "OptimizerState":
        return OptimizerState({k: a.copy() for k, a in self.m.items()},
                              {k: a.copy() for k, a in self.v.items()}, self.t)


_T_MAX = 2**62


def adamw_step(params: M.ModelParams, grads: M.ModelParams, state: OptimizerState,
               config: TrainConfig, current_lr: float):
    """One Adam update followed by decoupled decay on conv and dense weights.

    Returns new ``(params, state)``; the inputs are left untouched.
    """
    assert state.t < _T_MAX, "optimizer step counter overflow"
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_state = OptimizerState({}, {}, t)
    updates = {}
    grad_blocks = grads.layers
    for i, name, theta in params.trainable_items():
        g = getattr(grad_blocks[i], name)
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {theta.shape} at layer {i}.{name}")
        key = (i, name)
        m = state.m.get(key)
        v = state.v.get(key)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        new_theta = theta - current_lr * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
        if config.weight_decay and M.is_decayed(params, i, name):
            new_theta = new_theta - current_lr * config.weight_decay * new_theta
        new_state.m[key] = m
        new_state.v[key] = v
        updates[key] = new_theta
    return params.with_arrays(updates), new_state


# --- threshold calibration -----------------------------------------------------


def threshold_grid(points: int = 401) -> np.ndarray:
    return np.arange(points) / (points - 1)


def grid_f1(scores, labels, grid) -> np.ndarray:
    """F1 of ``p >= tau`` for every grid value."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    tp = len(pos) - np.searchsorted(pos, grid, side="left")
    fp = len(neg) - np.searchsorted(neg, grid, side="left")
    return f1_from_counts(tp, fp, len(pos) - tp)


def calibrate_threshold(scores, labels, points: int = 401) -> float:
    """Grid value maximizing F1 of the rule p_gait >= tau; ties go to the smallest."""
    y = np.asarray(labels).astype(bool)
    if y.all() or not y.any():
        log.warning("validation set holds a single class; using tau* = 0.5")
        return 0.5
    grid = threshold_grid(points)
    return float(grid[int(np.argmax(grid_f1(scores, y, grid)))])


# --- training -------------------------------------------------------------------


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch, batch, layer):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch} (first non-finite layer: {layer})")
        self.epoch, self.batch, self.layer = epoch, batch, layer


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_pr_auc: float
    learning_rate: float


@dataclass
class CalibratedModel:
    spec: M.ModelSpec
    params: M.ModelParams
    tau_star: float
    history: list
    best_epoch: int
    stopped_early: bool
    class_weights: Optional[ClassWeights] = None

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_pr_auc", "learning_rate"])
        for r in self.history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_pr_auc), repr(r.learning_rate)])
        return buf.getvalue()


def epoch_rng(seed: int, fold_index: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, fold_index, epoch])


def train(spec: M.ModelSpec, fold, config: TrainConfig = TrainConfig(), fold_index: Optional[int] = None,
          init=None) -> CalibratedModel:
    """Fit ``spec`` on ``fold.train``, select on ``fold.validation`` PR-AUC.

    Both callbacks use strict improvement. The returned parameters
    (including batch-norm running statistics) are those of the best epoch.
    """
    train_ws, val_ws = fold.train, fold.validation
    if len(train_ws) == 0 or len(val_ws) == 0:
        raise ValueError("train and validation portions must be nonempty")
    for name, ws in (("train", train_ws), ("validation", val_ws)):
        n0, n1 = ws.class_counts()
        if n0 == 0 or n1 == 0:
            raise ValueError(f"{name} portion must contain both classes")
    if fold_index is None:
        fold_index = getattr(fold, "fold_index", 0)
    _alloc.keep_heap()
    n0, n1 = train_ws.class_counts()
    cw = compute_class_weights(n0, n1, config.class_balance_beta)
    x = train_ws.data
    y = train_ws.labels.astype(np.int64)
    onehot = np.eye(M.N_CLASSES)[y]
    sw = cw.per_sample(y)
    xv, yv = val_ws.data, val_ws.labels

    params = init if init is not None else M.init_params(spec, config.seed)
    state = OptimizerState()
    lr = config.learning_rate
    best_auc = -np.inf
    best_params = params.copy()
    best_epoch = 0
    since_best = 0
    since_rlrop = 0
    history = []
    stopped_early = False
    n = len(x)
    for epoch in range(1, config.max_epochs + 1):
        rng = epoch_rng(config.seed, fold_index, epoch)
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            try:
                loss, grads, cache = M.loss_and_grads(spec, params, x[idx], onehot[idx], sw[idx], rng)
            except K.NonFiniteError as exc:
                raise NonFiniteLossError(epoch, b, exc.layer) from exc
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch, b, M.first_nonfinite_layer(spec, cache.outputs))
            params, state = adamw_step(params, grads, state, config, lr)
            params = params.with_bn_state(cache.bn_state)
            total += loss * len(idx)
        train_loss = total / n
        val_scores = M.predict_proba(spec, params, xv)[:, 1]
        auc = average_precision(val_scores, yv)
        history.append(EpochRecord(epoch, float(train_loss), float(auc), float(lr)))
        if auc > best_auc:
            best_auc, best_params, best_epoch = auc, params.copy(), epoch
            since_best = 0
            since_rlrop = 0
        else:
            since_best += 1
            since_rlrop += 1
            if since_best >= config.early_stop_patience:
                stopped_early = True
                break
            if since_rlrop >= config.rlrop_patience and lr > config.min_learning_rate:
                lr = max(lr * config.rlrop_factor, config.min_learning_rate)
                since_rlrop = 0
    val_scores = M.predict_proba(spec, best_params, xv)[:, 1]
    tau = calibrate_threshold(val_scores, yv, config.threshold_sweep_points)
    return CalibratedModel(spec, best_params, tau, history, best_epoch, stopped_early, cw)
