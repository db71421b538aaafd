"""The three detector architectures as declarative layer lists.

A model is an ordered list of ``LayerSpec``. Each layer reads the output of
the layer before it unless ``source`` says otherwise (``-1`` is the model
input); a ``residual_add`` sums its main input with the output of layer
``skip``. Forward and backward walk that list, so residual graphs need no
special casing.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from gaitsep import kernels as K

MODEL_NAMES = ("baseline", "model1", "model2")
INPUT_SHAPE = (60, 3)
N_CLASSES = 2

LAYER_KINDS = (
    "sepconv",
    "conv1x1",
    "batchnorm",
    "relu",
    "maxpool",
    "avgpool",
    "global_avg_pool",
    "dense_softmax",
    "dropout",
    "residual_add",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    kernel_size: int = 0
    pool_size: int = 0
    dropout_p: float = 0.0
    bias: bool = False
    source: Optional[int] = None
    skip: Optional[int] = None
    group: Optional[str] = None


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple
    input_shape: tuple = INPUT_SHAPE


def _baseline():
    return (
        LayerSpec("sepconv", filters=100, kernel_size=10, bias=True, group="SepConv1"),
        LayerSpec("relu"),
        LayerSpec("maxpool", pool_size=3),
        LayerSpec("sepconv", filters=40, kernel_size=10, bias=True, group="SepConv2"),
        LayerSpec("relu"),
        LayerSpec("global_avg_pool"),
        LayerSpec("dropout", dropout_p=0.5),
        LayerSpec("dense_softmax", filters=N_CLASSES, group="Dense"),
    )


def _model1():
    return (
        LayerSpec("sepconv", filters=8, kernel_size=5, group="SepConv1"),
        LayerSpec("batchnorm", group="BN1"),
        LayerSpec("relu"),
        LayerSpec("maxpool", pool_size=2),
        LayerSpec("sepconv", filters=16, kernel_size=7, group="SepConv2"),
        LayerSpec("batchnorm", group="BN2"),
        LayerSpec("relu"),
        LayerSpec("global_avg_pool"),
        LayerSpec("dense_softmax", filters=N_CLASSES, group="Dense"),
    )


def _model2():
    return (
        # block 1, main path
        LayerSpec("sepconv", filters=8, kernel_size=9, source=-1, group="Block1"),
        LayerSpec("batchnorm", group="Block1"),
        LayerSpec("relu"),
        LayerSpec("avgpool", pool_size=2),
        # block 1, projected skip pooled like the main path
        LayerSpec("conv1x1", filters=8, source=-1, group="Block1"),
        LayerSpec("batchnorm", group="Block1"),
        LayerSpec("avgpool", pool_size=2),
        LayerSpec("residual_add", skip=3),
        LayerSpec("relu"),
        # block 2
        LayerSpec("sepconv", filters=16, kernel_size=9, group="Block2"),
        LayerSpec("batchnorm", group="Block2"),
        LayerSpec("relu"),
        LayerSpec("conv1x1", filters=16, source=8, group="Block2"),
        LayerSpec("batchnorm", group="Block2"),
        LayerSpec("residual_add", skip=11),
        LayerSpec("relu"),
        LayerSpec("global_avg_pool"),
        LayerSpec("dense_softmax", filters=N_CLASSES, group="Dense"),
    )


_BUILDERS = {"baseline": _baseline, "model1": _model1, "model2": _model2}


def build_spec(name: str) -> ModelSpec:
    """Return the layer list of ``baseline``, ``model1`` or ``model2``."""
    try:
        layers = _BUILDERS[name]()
    except KeyError:
        raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}") from None
    spec = ModelSpec(name=name, layers=layers)
    infer_shapes(spec)
    return spec


def source_index(spec: ModelSpec, i: int) -> int:
    layer = spec.layers[i]
    return i - 1 if layer.source is None else layer.source


def infer_shapes(spec: ModelSpec) -> list:
    """Output shape of every layer; raises ``ValueError`` on an invalid graph."""
    shapes = []
    for i, layer in enumerate(spec.layers):
        src = source_index(spec, i)
        if src >= i or src < -1:
            raise ValueError(f"layer {i} reads from layer {src}, which is not earlier")
        shape = spec.input_shape if src == -1 else shapes[src]
        kind = layer.kind
        if kind not in LAYER_KINDS:
            raise ValueError(f"layer {i}: unknown kind {kind!r}")
        if kind in ("sepconv", "conv1x1"):
            if len(shape) != 2 or layer.filters < 1:
                raise ValueError(f"layer {i}: {kind} needs a (length, channels) input and filters >= 1")
            if kind == "sepconv" and layer.kernel_size < 1:
                raise ValueError(f"layer {i}: kernel_size must be >= 1")
            out = (shape[0], layer.filters)
        elif kind in ("batchnorm", "relu", "dropout"):
            out = shape
        elif kind in ("maxpool", "avgpool"):
            if layer.pool_size < 1 or len(shape) != 2 or shape[0] < layer.pool_size:
                raise ValueError(f"layer {i}: invalid pool size {layer.pool_size} for shape {shape}")
            out = (shape[0] // layer.pool_size, shape[1])
        elif kind == "global_avg_pool":
            out = (shape[1],)
        elif kind == "dense_softmax":
            if len(shape) != 1:
                raise ValueError(f"layer {i}: dense head needs a vector input, got {shape}")
            out = (layer.filters,)
        else:  # residual_add
            if layer.skip is None or not 0 <= layer.skip < i:
                raise ValueError(f"layer {i}: residual_add must reference an earlier layer")
            if shapes[layer.skip] != shape:
                raise ValueError(
                    f"layer {i}: residual shapes differ ({shape} vs {shapes[layer.skip]}); "
                    "a projection is required"
                )
            out = shape
        shapes.append(tuple(out))
    if spec.layers[-1].kind != "dense_softmax" or shapes[-1] != (N_CLASSES,):
        raise ValueError("model must end in a 2-class dense softmax head")
    return shapes


def input_shapes(spec: ModelSpec) -> list:
    shapes = infer_shapes(spec)
    return [spec.input_shape if source_index(spec, i) == -1 else shapes[source_index(spec, i)]
            for i in range(len(spec.layers))]


def layer_param_count(layer: LayerSpec, in_shape) -> int:
    if layer.kind == "sepconv":
        c = in_shape[1]
        return layer.kernel_size * c + c * layer.filters + (layer.filters if layer.bias else 0)
    if layer.kind == "conv1x1":
        return in_shape[1] * layer.filters
    if layer.kind == "batchnorm":
        return 2 * in_shape[-1]
    if layer.kind == "dense_softmax":
        return in_shape[0] * layer.filters + layer.filters
    return 0


def count_params_by_layer(spec: ModelSpec) -> list:
    return [layer_param_count(layer, s) for layer, s in zip(spec.layers, input_shapes(spec))]


def count_params_by_group(spec: ModelSpec) -> dict:
    """Trainable parameters summed per named group (e.g. ``Block1``), in layer order."""
    groups = {}
    for layer, n in zip(spec.layers, count_params_by_layer(spec)):
        if layer.group is not None:
            groups[layer.group] = groups.get(layer.group, 0) + n
    return groups


def count_params(spec: ModelSpec) -> int:
    """Trainable parameters only; batch-norm running statistics are excluded."""
    return sum(count_params_by_layer(spec))


def layer_macs(layer: LayerSpec, in_shape) -> int:
    """Multiply-accumulates for one inference of ``layer``.

    Convolutions, 1x1 projections and the dense head count one MAC per
    multiply; batch norm counts one multiply per element (its folded scale);
    bias adds, pooling, ReLU, residual adds and softmax count zero.
    """
    if layer.kind == "sepconv":
        length, c = in_shape
        return length * layer.kernel_size * c + length * c * layer.filters
    if layer.kind == "conv1x1":
        return in_shape[0] * in_shape[1] * layer.filters
    if layer.kind == "batchnorm":
        return int(np.prod(in_shape))
    if layer.kind == "dense_softmax":
        return in_shape[0] * layer.filters
    return 0


def count_macs(spec: ModelSpec) -> int:
    return sum(layer_macs(layer, s) for layer, s in zip(spec.layers, input_shapes(spec)))


@dataclass
class ModelParams:
    """Parameter blocks aligned with ``spec.layers`` (``None`` for parameter-free layers)."""

    layers: list
    seed: Optional[int] = None

    def trainable_items(self) -> Iterator[tuple]:
        """Yield ``(layer_index, name, array)`` for every trainable tensor."""
        for i, block in enumerate(self.layers):
            if block is None:
                continue
            for name in _TRAINABLE[type(block)]:
                arr = getattr(block, name)
                if arr is not None:
                    yield i, name, arr

    def n_trainable(self) -> int:
        return sum(a.size for _, _, a in self.trainable_items())

    def with_arrays(self, arrays: dict) -> "ModelParams":
        """Copy with ``{(layer_index, name): array}`` substituted."""
        layers = list(self.layers)
        for (i, name), arr in arrays.items():
            layers[i] = replace(layers[i], **{name: arr})
        return ModelParams(layers, self.seed)

    def with_bn_state(self, bn_state: dict) -> "ModelParams":
        layers = list(self.layers)
        for i, (rm, rv) in bn_state.items():
            layers[i] = replace(layers[i], running_mean=rm, running_var=rv)
        return ModelParams(layers, self.seed)

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ModelParams":
        layers = []
        for block in self.layers:
            if block is None:
                layers.append(None)
                continue
            fields = {k: (v.astype(dtype) if isinstance(v, np.ndarray) else v)
                      for k, v in vars(block).items()}
            layers.append(type(block)(**fields))
        return ModelParams(layers, self.seed)


_TRAINABLE = {
    K.SepConvParams: ("depthwise", "pointwise", "bias"),
    K.Conv1x1Params: ("weights",),
    K.BatchNormParams: ("gamma", "beta"),
    K.DenseParams: ("weights", "bias"),
}

# tensors that receive decoupled weight decay
DECAYED = {
    (K.SepConvParams, "depthwise"),
    (K.SepConvParams, "pointwise"),
    (K.Conv1x1Params, "weights"),
    (K.DenseParams, "weights"),
}


def is_decayed(params: ModelParams, layer_index: int, name: str) -> bool:
    return (type(params.layers[layer_index]), name) in DECAYED


def _he(rng, fan_in, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """He-normal weights, zero biases, unit gamma, zero beta, (0, 1) running stats.

    Depthwise taps use fan_in = kernel_size since each filter sees one channel.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for layer, shape in zip(spec.layers, input_shapes(spec)):
        if layer.kind == "sepconv":
            c, f, k = shape[1], layer.filters, layer.kernel_size
            layers.append(K.SepConvParams(
                depthwise=_he(rng, k, (k, c)),
                pointwise=_he(rng, c, (c, f)),
                bias=np.zeros(f) if layer.bias else None,
            ))
        elif layer.kind == "conv1x1":
            layers.append(K.Conv1x1Params(_he(rng, shape[1], (shape[1], layer.filters))))
        elif layer.kind == "batchnorm":
            c = shape[-1]
            layers.append(K.BatchNormParams(np.ones(c), np.zeros(c), np.zeros(c), np.ones(c)))
        elif layer.kind == "dense_softmax":
            layers.append(K.DenseParams(_he(rng, shape[0], (shape[0], layer.filters)), np.zeros(layer.filters)))
        else:
            layers.append(None)
    return ModelParams(layers, seed)


@dataclass
class ForwardCache:
    inputs: list  # input activation of each layer
    output: np.ndarray
    bn: dict = field(default_factory=dict)  # layer index -> BatchNormCache
    masks: dict = field(default_factory=dict)  # layer index -> dropout mask
    bn_state: dict = field(default_factory=dict)  # layer index -> (running_mean, running_var)
    hidden: dict = field(default_factory=dict)  # layer index -> depthwise output of a sepconv
    outputs: list = field(default_factory=list)  # output activation of each layer
    n_layers: int = 0


def first_nonfinite_layer(spec: ModelSpec, outputs) -> str:
    """``"index:kind"`` of the first layer output holding NaN or inf, else ``"input"``."""
    for i, y in enumerate(outputs):
        if not np.all(np.isfinite(y)):
            return f"{i}:{spec.layers[i].kind}"
    return "input"


def forward(spec: ModelSpec, params: ModelParams, x, mode: str = "infer", dropout_rng=None):
    """Run the model on a batch ``(B, 60, 3)``.

    ``infer`` returns the ``(B, 2)`` probability matrix, using running batch
    norm statistics and no dropout. ``train`` returns ``(probs, cache)``;
    the cache carries what ``backward`` needs plus the updated running
    statistics (``cache.bn_state``), which are not written into ``params``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != tuple(spec.input_shape):
        raise K.ContractError(f"expected input (batch, {spec.input_shape[0]}, {spec.input_shape[1]}), got {x.shape}")
    if mode not in ("train", "infer"):
        raise K.ContractError(f"unknown mode {mode!r}")
    train = mode == "train"
    if train and dropout_rng is None:
        dropout_rng = np.random.default_rng(0)
    outs = []
    cache = ForwardCache(inputs=[], output=None, n_layers=len(spec.layers), outputs=outs)
    try:
        for i, layer in enumerate(spec.layers):
            src = source_index(spec, i)
            h = x if src == -1 else outs[src]
            cache.inputs.append(h)
            block = params.layers[i]
            kind = layer.kind
            if kind == "sepconv":
                if train:
                    y, cache.hidden[i] = K.sepconv1d_forward(h, block, return_hidden=True)
                else:
                    y = K.sepconv1d_forward(h, block)
            elif kind == "conv1x1":
                y = K.conv1x1_forward(h, block.weights)
            elif kind == "batchnorm":
                y, bn_cache = K.batchnorm_forward(h, block, mode)
                if train:
                    cache.bn[i] = bn_cache
                    cache.bn_state[i] = K.updated_running_stats(block, bn_cache)
            elif kind == "relu":
                y = K.relu(h)
            elif kind == "maxpool":
                y = K.maxpool1d(h, layer.pool_size)
            elif kind == "avgpool":
                y = K.avgpool1d(h, layer.pool_size)
            elif kind == "global_avg_pool":
                y = K.global_avg_pool(h)
            elif kind == "dropout":
                if train and layer.dropout_p > 0:
                    y, mask = K.dropout_forward(h, layer.dropout_p, dropout_rng)
                    cache.masks[i] = mask
                else:
                    y = h
            elif kind == "dense_softmax":
                y = K.dense_softmax_forward(h, block)
            else:  # residual_add
                y = h + outs[layer.skip]
            outs.append(y)
    except K.NonFiniteError as exc:
        exc.layer = first_nonfinite_layer(spec, outs)
        raise
    probs = outs[-1]
    if not train:
        return probs
    cache.output = probs
    return probs, cache


def backward(spec: ModelSpec, params: ModelParams, cache: ForwardCache, grad_logits,
             return_activation_grads: bool = False):
    """Gradients of the loss w.r.t. every trainable tensor.

    ``grad_logits`` is dLoss/dlogits of the softmax head, shape ``(B, 2)``.
    Returns a ``ModelParams`` of gradients (BN running stats ``None``); with
    ``return_activation_grads`` also the list of dLoss/d(layer output) and
    dLoss/d(input).
    """
    if cache is None or cache.output is None or cache.n_layers != len(spec.layers):
        raise K.ContractError("backward needs the cache of a matching train-mode forward")
    n = len(spec.layers)
    g_out = [None] * n
    g_input = None
    grads = [None] * n
    g_out[n - 1] = np.asarray(grad_logits, dtype=np.float64)

    def accumulate(idx, g):
        nonlocal g_input
        if idx == -1:
            g_input = g if g_input is None else g_input + g
        else:
            g_out[idx] = g if g_out[idx] is None else g_out[idx] + g

    for i in range(n - 1, -1, -1):
        g = g_out[i]
        if g is None:
            continue
        layer = spec.layers[i]
        h = cache.inputs[i]
        block = params.layers[i]
        kind = layer.kind
        if kind == "sepconv":
            gh, grads[i] = K.sepconv1d_backward(h, block, g, cache.hidden.get(i))
        elif kind == "conv1x1":
            gh, gw = K.conv1x1_backward(h, block.weights, g)
            grads[i] = K.Conv1x1Params(gw)
        elif kind == "batchnorm":
            gh, gg, gbeta = K.batchnorm_backward(block, cache.bn[i], g)
            grads[i] = K.BatchNormParams(gg, gbeta)
        elif kind == "relu":
            gh = K.relu_backward(h, g)
        elif kind == "maxpool":
            gh = K.maxpool1d_backward(h, layer.pool_size, g)
        elif kind == "avgpool":
            gh = K.avgpool1d_backward(h, layer.pool_size, g)
        elif kind == "global_avg_pool":
            gh = K.global_avg_pool_backward(h, g)
        elif kind == "dropout":
            gh = g * cache.masks[i] if i in cache.masks else g
        elif kind == "dense_softmax":
            gh, grads[i] = K.dense_softmax_backward(h, block, g)
        else:  # residual_add: the sum node passes its gradient to both operands
            gh = g
            accumulate(layer.skip, g)
        accumulate(source_index(spec, i), gh)
    out = ModelParams(grads, params.seed)
    if return_activation_grads:
        return out, g_out, g_input
    return out


def loss_and_grads(spec: ModelSpec, params: ModelParams, x, onehot, sample_weights, dropout_rng=None):
    """Mean weighted cross-entropy of a train-mode pass and its gradients.

    Returns ``(loss, grads, cache)``.
    """
    probs, cache = forward(spec, params, x, "train", dropout_rng)
    loss = K.weighted_crossentropy(probs, onehot, sample_weights)
    grads = backward(spec, params, cache, K.crossentropy_logit_grad(probs, onehot, sample_weights))
    return loss, grads, cache


def predict_proba(spec: ModelSpec, params: ModelParams, x, batch_size: int = 1024) -> np.ndarray:
    """Inference-mode probabilities, evaluated in chunks."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        return np.zeros((0, N_CLASSES))
    return np.concatenate([forward(spec, params, x[i : i + batch_size]) for i in range(0, len(x), batch_size)])
