"""Layer primitives with exact forward and backward passes.

Activations are laid out ``(batch, length, channels)``. Every function also
accepts a single ``(length, channels)`` feature map and returns the same
rank it was given. The depthwise kernels always compute in float64; the
float32 deployment path lives in ``gaitsep.runtime``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gaitsep import _backend

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99
PROB_FLOOR = 1e-12


class ContractError(ValueError):
    """An argument violates a kernel's shape or value contract."""


class NonFiniteError(ContractError):
    """A kernel received NaN or infinite values.

    ``layer`` is filled in by callers that know where the values came from.
    """

    layer = None


@dataclass
class SepConvParams:
    depthwise: np.ndarray  # (kernel_size, in_channels)
    pointwise: np.ndarray  # (in_channels, out_channels)
    bias: Optional[np.ndarray] = None  # (out_channels,)

    @property
    def kernel_size(self) -> int:
        return self.depthwise.shape[0]

    @property
    def in_channels(self) -> int:
        return self.depthwise.shape[1]

    @property
    def out_channels(self) -> int:
        return self.pointwise.shape[1]

    @property
    def n_params(self) -> int:
        n = self.depthwise.size + self.pointwise.size
        return n + (self.bias.size if self.bias is not None else 0)


@dataclass
class Conv1x1Params:
    weights: np.ndarray  # (in_channels, out_channels)

    @property
    def n_params(self) -> int:
        return self.weights.size


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @property
    def n_params(self) -> int:
        # running statistics are state, not trainable parameters
        return self.gamma.size + self.beta.size


@dataclass
class DenseParams:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    extra: dict = field(default_factory=dict)


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ContractError(f"expected (length, channels) or (batch, length, channels), got ndim={x.ndim}")
    return x, False


def _unbatch(y, single):
    return y[0] if single else y


def _colsum(a, channels=None):
    """Sum over every axis but the channel axis; a BLAS product is much faster
    than ``sum(axis=(0, 1))`` on channel-last arrays."""
    a2 = a.reshape(-1, a.shape[-1] if channels is None else channels)
    return np.ones(a2.shape[0], dtype=a2.dtype) @ a2


def _rows(v, length):
    """Per-channel vector repeated along time, to broadcast over ``(batch, length * channels)``.

    Broadcasting a short channel vector directly leaves numpy with inner loops
    only a few elements long.
    """
    return np.tile(v, length)


def _check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains non-finite values")


def same_padding(kernel_size: int) -> tuple[int, int]:
    """Left/right zero padding that keeps length unchanged at stride 1.

    Even kernels put the extra zero on the right.
    """
    left = (kernel_size - 1) // 2
    return left, kernel_size - 1 - left


def _pad(x, kernel_size):
    left, right = same_padding(kernel_size)
    return np.pad(x, ((0, 0), (left, right), (0, 0)))


def _check_sepconv(x, params):
    if x.shape[2] != params.in_channels:
        raise ContractError(
            f"input channels {x.shape[2]} != depthwise in_channels {params.in_channels}"
        )
    if params.pointwise.shape[0] != params.in_channels:
        raise ContractError(
            f"pointwise in_channels {params.pointwise.shape[0]} != depthwise in_channels {params.in_channels}"
        )
    if params.bias is not None and params.bias.shape != (params.out_channels,):
        raise ContractError(f"bias length {params.bias.shape[0]} != out_channels {params.out_channels}")


def sepconv1d_forward(x, params: SepConvParams, return_hidden: bool = False):
    """Depthwise temporal filter per channel, then a 1x1 channel mix.

    With ``return_hidden`` the depthwise output is returned too, so a
    later backward pass can skip recomputing it.
    """
    xb, single = _batched(x)
    _check_sepconv(xb, params)
    _check_finite(xb, "input")
    xpad = np.ascontiguousarray(_pad(xb, params.kernel_size), dtype=np.float64)
    h = _backend.depthwise_forward(xpad, np.ascontiguousarray(params.depthwise, dtype=np.float64))
    y = h @ params.pointwise
    if params.bias is not None:
        y += params.bias
    if return_hidden:
        return _unbatch(y, single), h
    return _unbatch(y, single)


def sepconv1d_backward(x, params: SepConvParams, grad_out, hidden=None):
    """Return ``(grad_input, SepConvParams of gradients)``.

    ``hidden`` is the batched depthwise output from the forward pass, if kept.
    """
    xb, single = _batched(x)
    gb, _ = _batched(grad_out)
    _check_sepconv(xb, params)
    expected = (xb.shape[0], xb.shape[1], params.out_channels)
    if gb.shape != expected:
        raise ContractError(f"grad_output shape {gb.shape} != forward output shape {expected}")
    k = params.kernel_size
    dw = np.ascontiguousarray(params.depthwise, dtype=np.float64)
    xpad = np.ascontiguousarray(_pad(xb, k), dtype=np.float64)
    h = _backend.depthwise_forward(xpad, dw) if hidden is None else hidden
    c, f = params.pointwise.shape
    g_pw = h.reshape(-1, c).T @ gb.reshape(-1, f)
    g_h = np.ascontiguousarray(gb @ params.pointwise.T)
    g_xpad, g_dw = _backend.depthwise_backward(xpad, dw, g_h)
    left, _ = same_padding(k)
    gx = g_xpad[:, left : left + xb.shape[1], :]
    g_bias = _colsum(gb) if params.bias is not None else None
    return _unbatch(gx, single), SepConvParams(g_dw, g_pw, g_bias)


def conv1x1_forward(x, weights):
    xb, single = _batched(x)
    if xb.shape[2] != weights.shape[0]:
        raise ContractError(f"input channels {xb.shape[2]} != weights in_channels {weights.shape[0]}")
    return _unbatch(xb @ weights, single)


def conv1x1_backward(x, weights, grad_out):
    """Return ``(grad_input, grad_weights)``."""
    xb, single = _batched(x)
    gb, _ = _batched(grad_out)
    if xb.shape[2] != weights.shape[0]:
        raise ContractError(f"input channels {xb.shape[2]} != weights in_channels {weights.shape[0]}")
    if gb.shape != (xb.shape[0], xb.shape[1], weights.shape[1]):
        raise ContractError(f"grad_output shape {gb.shape} does not match forward output")
    gw = xb.reshape(-1, weights.shape[0]).T @ gb.reshape(-1, weights.shape[1])
    return _unbatch(gb @ weights.T, single), gw


def batchnorm_forward(x, params: BatchNormParams, mode: str = "train"):
    """Normalize per channel.

    In ``train`` mode statistics are taken over batch and length jointly and
    the cache holds what backward needs; ``updated_running_stats`` turns that
    cache into new running statistics without touching ``params``.
    In ``infer`` mode the running statistics are used and the cache is None.
    Returns ``(y, cache)``.
    """
    xb, single = _batched(x)
    if xb.shape[2] != params.channels:
        raise ContractError(f"input channels {xb.shape[2]} != batchnorm channels {params.channels}")
    if mode == "infer":
        if params.running_mean is None or params.running_var is None:
            raise ContractError("batchnorm running statistics are uninitialized")
        inv_std = 1.0 / np.sqrt(params.running_var + params.epsilon)
        y = (xb - params.running_mean) * (params.gamma * inv_std) + params.beta
        return _unbatch(y, single), None
    if mode != "train":
        raise ContractError(f"unknown batchnorm mode {mode!r}")
    b, length, c = xb.shape
    n = b * length
    mean = _colsum(xb) / n
    x2 = xb.reshape(b, length * c)
    xc = x2 - _rows(mean, length)
    var = _colsum(xc * xc, c) / n  # biased
    inv_std = 1.0 / np.sqrt(var + params.epsilon)
    x_hat = xc * _rows(inv_std, length)
    y = x_hat * _rows(params.gamma, length) + _rows(params.beta, length)
    return _unbatch(y.reshape(xb.shape), single), BatchNormCache(x_hat=x_hat.reshape(xb.shape), inv_std=inv_std,
                                                                 mean=mean, var=var)


def updated_running_stats(params: BatchNormParams, cache: BatchNormCache):
    """running <- momentum * running + (1 - momentum) * batch statistic."""
    m = params.momentum
    rm = params.running_mean if params.running_mean is not None else np.zeros_like(cache.mean)
    rv = params.running_var if params.running_var is not None else np.ones_like(cache.var)
    return m * rm + (1.0 - m) * cache.mean, m * rv + (1.0 - m) * cache.var


def batchnorm_backward(params: BatchNormParams, cache: BatchNormCache, grad_out):
    """Return ``(grad_input, grad_gamma, grad_beta)`` for a train-mode forward."""
    gb, single = _batched(grad_out)
    if gb.shape != cache.x_hat.shape:
        raise ContractError(f"grad_output shape {gb.shape} != forward shape {cache.x_hat.shape}")
    b, length, c = gb.shape
    n = b * length
    g2 = gb.reshape(b, length * c)
    xh = cache.x_hat.reshape(b, length * c)
    g_beta = _colsum(gb)
    g_gamma = _colsum(g2 * xh, c)
    # sums of g_xhat and g_xhat * x_hat are gamma times the two sums above
    gx = _rows(params.gamma * cache.inv_std / n, length) * (n * g2 - _rows(g_beta, length) - xh * _rows(g_gamma, length))
    return _unbatch(gx.reshape(gb.shape), single), g_gamma, g_beta


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    return np.where(np.asarray(x) > 0.0, grad_out, 0.0)


def _check_pool(x, size):
    if size < 1:
        raise ContractError(f"pool size must be >= 1, got {size}")
    if x.shape[1] < size:
        raise ContractError(f"length {x.shape[1]} shorter than pool size {size}")


def maxpool1d(x, size: int):
    """Non-overlapping max pooling; a trailing remainder shorter than ``size`` is dropped."""
    xb, single = _batched(x)
    _check_pool(xb, size)
    lo = xb.shape[1] // size
    y = xb[:, : lo * size].reshape(xb.shape[0], lo, size, xb.shape[2]).max(axis=2)
    return _unbatch(y, single)


def maxpool1d_backward(x, size: int, grad_out):
    """Route each gradient to the first maximal input of its pool window."""
    xb, single = _batched(x)
    gb, _ = _batched(grad_out)
    _check_pool(xb, size)
    lo = xb.shape[1] // size
    if gb.shape != (xb.shape[0], lo, xb.shape[2]):
        raise ContractError(f"grad_output shape {gb.shape} does not match pooled shape")
    gx = _backend.maxpool_backward(
        np.ascontiguousarray(xb, dtype=np.float64), size, np.ascontiguousarray(gb, dtype=np.float64)
    )
    return _unbatch(gx, single)


def avgpool1d(x, size: int):
    xb, single = _batched(x)
    _check_pool(xb, size)
    lo = xb.shape[1] // size
    blocks = xb[:, : lo * size].reshape(xb.shape[0], lo, size, xb.shape[2])
    y = blocks[:, :, 0, :].copy()
    for j in range(1, size):
        y += blocks[:, :, j, :]
    y /= size
    return _unbatch(y, single)


def avgpool1d_backward(x, size: int, grad_out):
    xb, single = _batched(x)
    gb, _ = _batched(grad_out)
    _check_pool(xb, size)
    nb, length, c = xb.shape
    lo = length // size
    gx = np.zeros((nb, length, c), dtype=np.result_type(xb, gb))
    gx[:, : lo * size] = np.repeat(gb / size, size, axis=1)
    return _unbatch(gx, single)


def global_avg_pool(x):
    """Per-channel mean over length: ``(B, L, C) -> (B, C)``, ``(L, C) -> (C,)``."""
    xb, single = _batched(x)
    y = (np.ones(xb.shape[1], dtype=xb.dtype) @ xb) / xb.shape[1]
    return y[0] if single else y


def global_avg_pool_backward(x, grad_out):
    xb, single = _batched(x)
    g = np.asarray(grad_out)
    if single:
        g = g[None]
    gx = np.broadcast_to(g[:, None, :] / xb.shape[1], xb.shape).copy()
    return _unbatch(gx, single)


def dropout_forward(x, p: float, rng: np.random.Generator):
    """Inverted dropout; returns ``(y, mask)`` where mask holds the 0 or 1/(1-p) scale."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    mask = (rng.random(np.shape(x)) >= p) / (1.0 - p)
    return x * mask, mask


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dense_softmax_forward(x, params: DenseParams):
    """Affine map to two logits, then a max-shifted softmax."""
    x = np.asarray(x)
    if x.shape[-1] != params.weights.shape[0]:
        raise ContractError(f"input dim {x.shape[-1]} != dense in_dim {params.weights.shape[0]}")
    return softmax(x @ params.weights + params.bias)


def dense_softmax_backward(x, params: DenseParams, grad_logits):
    """Gradients given dLoss/dlogits; returns ``(grad_input, DenseParams)``."""
    x = np.asarray(x)
    g = np.asarray(grad_logits)
    if x.ndim == 1:
        gw = np.outer(x, g)
        gb = g.copy()
    else:
        gw = x.T @ g
        gb = g.sum(axis=0)
    return g @ params.weights.T, DenseParams(gw, gb)


def weighted_crossentropy(probs, onehot, weight):
    """Weighted categorical cross-entropy.

    For a single probability vector returns ``-weight * sum(onehot * ln p)``;
    for a batch returns the mean of the per-sample weighted losses, with
    ``weight`` a scalar or one weight per sample.
    """
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    per = -(onehot * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=-1)
    per = per * np.asarray(weight, dtype=np.float64)
    if per.ndim == 0:
        return float(per)
    return float(per.mean())


def crossentropy_logit_grad(probs, onehot, weights):
    """dLoss/dlogits for the batch-mean weighted loss of a softmax head."""
    probs = np.asarray(probs, dtype=np.float64)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), probs.shape[:1])
    return (probs - onehot) * (w / probs.shape[0])[:, None]
