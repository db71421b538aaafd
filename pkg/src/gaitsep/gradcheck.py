"""Central finite-difference checks of full-model gradients.

ReLU and max pooling are piecewise linear. A perturbation that flips a ReLU
sign or moves a max-pool argmax straddles a kink, and the difference
quotient there does not estimate the derivative. Such coordinates are
detected by comparing activation patterns at theta +/- h and replaced by
fresh samples; the count is reported.

Relative errors use ``max(|analytic|, |numeric|, floor)`` as denominator.
At step 1e-6 the difference quotient of an O(1) float64 loss carries about
1e-10 of rounding noise, so gradients far below ``floor`` = 1e-5 cannot be
resolved to 1e-4 relative accuracy by any correct implementation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from gaitsep import models as M
from gaitsep.kernels import crossentropy_logit_grad, weighted_crossentropy


def activation_pattern(spec: M.ModelSpec, cache: M.ForwardCache) -> bytes:
    """Digest of every ReLU sign and max-pool argmax in a train-mode pass."""
    h = hashlib.sha256()
    for i, layer in enumerate(spec.layers):
        x = cache.inputs[i]
        if layer.kind == "relu":
            h.update(np.packbits(x > 0).tobytes())
        elif layer.kind == "maxpool":
            nb, length, c = x.shape
            lo = length // layer.pool_size
            arg = x[:, : lo * layer.pool_size].reshape(nb, lo, layer.pool_size, c).argmax(axis=2)
            h.update(arg.astype(np.int8).tobytes())
    return h.digest()


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_kinks_skipped: int
    rel_errors: np.ndarray


RESOLUTION_FLOOR = 1e-5


def relative_error(analytic, numeric, floor=RESOLUTION_FLOOR):
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom


def check_model_gradients(spec, params, x, onehot, weights, n_coords=500, step=1e-6,
                          seed=0, dropout_seed=5):
    """Compare backprop with central differences on ``n_coords`` random coordinates.

    Coordinates are drawn from the trainable parameters; when a model has
    fewer than ``n_coords`` parameters every one is checked and the rest are
    drawn from the input batch. Dropout masks are frozen by re-seeding the
    dropout stream on every evaluation.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)

    def evaluate(p, xx):
        probs, cache = M.forward(spec, p, xx, "train", np.random.default_rng(dropout_seed))
        return weighted_crossentropy(probs, onehot, weights), cache

    probs, cache = M.forward(spec, params, x, "train", np.random.default_rng(dropout_seed))
    grads, _, g_input = M.backward(spec, params, cache, crossentropy_logit_grad(probs, onehot, weights),
                                   return_activation_grads=True)
    coords = [(i, name, j) for i, name, arr in params.trainable_items() for j in range(arr.size)]
    coords = [coords[k] for k in rng.permutation(len(coords))]
    coords += [(-1, "input", j) for j in rng.permutation(x.size)]
    errors = []
    skipped = 0
    for i, name, j in coords:
        if len(errors) >= n_coords:
            break
        if i == -1:
            arr = x
        else:
            arr = getattr(params.layers[i], name)
        plus = arr.copy().ravel()
        minus = arr.copy().ravel()
        plus[j] += step
        minus[j] -= step
        if i == -1:
            f_plus, c_plus = evaluate(params, plus.reshape(x.shape))
            f_minus, c_minus = evaluate(params, minus.reshape(x.shape))
            analytic = float(g_input.ravel()[j])
        else:
            f_plus, c_plus = evaluate(params.with_arrays({(i, name): plus.reshape(arr.shape)}), x)
            f_minus, c_minus = evaluate(params.with_arrays({(i, name): minus.reshape(arr.shape)}), x)
            analytic = float(getattr(grads.layers[i], name).ravel()[j])
        if activation_pattern(spec, c_plus) != activation_pattern(spec, c_minus):
            skipped += 1
            continue
        numeric = (f_plus - f_minus) / (2 * step)
        errors.append(relative_error(analytic, numeric))
    errors = np.array(errors)
    return GradCheckResult(float(errors.max()) if len(errors) else float("nan"), len(errors), skipped, errors)
