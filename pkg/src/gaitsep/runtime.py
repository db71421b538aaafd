"""Deployable inference: the ``.gmdl`` binary format, a static arena plan and
an allocation-free float32 engine.

File layout (little-endian)::

    header   <4sHBHBfHI   magic "GMDL", version, model code, input length,
                          input channels, tau*, layer count, blob bytes
    table    <BBHHHHII    per layer: kind, flags, filters, size, source,
                          skip, blob byte offset, float count
    blob     float32      per layer in tensor order depthwise, pointwise,
                          bias, gamma, beta, running mean, running var,
                          1x1 / dense weights, dense bias

``size`` is the kernel or pool size (dropout: rate in per-mille). ``source``
is 0 for "previous layer", 1 for "model input" and i + 2 for layer i;
``skip`` is 0 for none and i + 1 for layer i. Batch norm is stored raw and
folded into a per-channel affine op at load time.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from gaitsep import _backend
from gaitsep import _program as P
from gaitsep import kernels as K
from gaitsep import models as M

MAGIC = b"GMDL"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHBHBfHI")
RECORD = struct.Struct("<BBHHHHII")
CUSTOM_MODEL_CODE = 255

LAYER_CODES = {
    "sepconv": 1,
    "conv1x1": 2,
    "batchnorm": 3,
    "relu": 4,
    "maxpool": 5,
    "avgpool": 6,
    "residual_add": 7,
    "global_avg_pool": 8,
    "dense_softmax": 9,
    "dropout": 10,
}
LAYER_KINDS = {v: k for k, v in LAYER_CODES.items()}
FLAG_BIAS = 1


class ModelFormatError(ValueError):
    """A ``.gmdl`` file failed validation; ``code`` identifies the failure class."""

    code = "INVALID"
    exit_code = 3


class BadMagicError(ModelFormatError):
    code = "BAD_MAGIC"


class VersionMismatchError(ModelFormatError):
    code = "VERSION_MISMATCH"


class TruncatedError(ModelFormatError):
    code = "TRUNCATED"


class UnknownLayerError(ModelFormatError):
    code = "UNKNOWN_LAYER"


class BadOffsetError(ModelFormatError):
    code = "BAD_OFFSET"


class SizeMismatchError(ModelFormatError):
    code = "SIZE_MISMATCH"


class ExportError(ValueError):
    """Spec and parameters do not line up."""


# --- export -------------------------------------------------------------------


def _expected_tensors(layer: M.LayerSpec, in_shape) -> list:
    """``(name, shape)`` of each stored tensor, in blob order."""
    if layer.kind == "sepconv":
        c, k, f = in_shape[1], layer.kernel_size, layer.filters
        out = [("depthwise", (k, c)), ("pointwise", (c, f))]
        if layer.bias:
            out.append(("bias", (f,)))
        return out
    if layer.kind == "batchnorm":
        c = in_shape[-1]
        return [("gamma", (c,)), ("beta", (c,)), ("running_mean", (c,)), ("running_var", (c,))]
    if layer.kind == "conv1x1":
        return [("weights", (in_shape[1], layer.filters))]
    if layer.kind == "dense_softmax":
        return [("weights", (in_shape[0], layer.filters)), ("bias", (layer.filters,))]
    return []


def _encode_ref(source) -> int:
    return 0 if source is None else source + 2


def _decode_ref(code: int):
    return None if code == 0 else code - 2


def export(spec: M.ModelSpec, params: M.ModelParams, tau_star: float) -> bytes:
    """Serialize a trained model; float64 weights are rounded to nearest float32."""
    if len(params.layers) != len(spec.layers):
        raise ExportError(f"{len(params.layers)} parameter blocks for {len(spec.layers)} layers")
    if not 0.0 <= float(tau_star) <= 1.0:
        raise ExportError(f"tau* must lie in [0, 1], got {tau_star}")
    shapes = M.input_shapes(spec)
    records, chunks = [], []
    offset = 0
    for i, (layer, shape) in enumerate(zip(spec.layers, shapes)):
        block = params.layers[i]
        expected = _expected_tensors(layer, shape)
        if expected and block is None:
            raise ExportError(f"layer {i} ({layer.kind}) has no parameters")
        count = 0
        for name, shp in expected:
            arr = getattr(block, name, None)
            if arr is None or tuple(np.shape(arr)) != shp:
                got = None if arr is None else np.shape(arr)
                raise ExportError(f"layer {i} ({layer.kind}) tensor {name}: expected shape {shp}, got {got}")
            flat = np.asarray(arr, dtype="<f4").ravel()
            chunks.append(flat.tobytes())
            count += flat.size
        size = layer.kernel_size or layer.pool_size
        if layer.kind == "dropout":
            size = int(round(layer.dropout_p * 1000))
        skip = 0 if layer.skip is None else layer.skip + 1
        records.append(RECORD.pack(LAYER_CODES[layer.kind], FLAG_BIAS if layer.bias else 0, layer.filters,
                                   size, _encode_ref(layer.source), skip, offset, count))
        offset += 4 * count
    code = M.MODEL_NAMES.index(spec.name) if spec.name in M.MODEL_NAMES else CUSTOM_MODEL_CODE
    length, channels = spec.input_shape
    header = HEADER.pack(MAGIC, FORMAT_VERSION, code, length, channels, float(tau_star), len(spec.layers), offset)
    return header + b"".join(records) + b"".join(chunks)


# --- load ---------------------------------------------------------------------------


@dataclass
class DecodedModel:
    spec: M.ModelSpec
    params: M.ModelParams  # float32 values held as float32 arrays
    tau: float
    version: int


def decode(buf: bytes) -> DecodedModel:
    """Parse and validate a ``.gmdl`` image without building an engine."""
    buf = bytes(buf)
    if len(buf) < HEADER.size:
        if len(buf) >= 4 and buf[:4] != MAGIC:
            raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
        raise TruncatedError(f"file is {len(buf)} bytes, shorter than the {HEADER.size}-byte header")
    magic, version, code, length, channels, tau, n_layers, blob_bytes = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"file format version {version}, this reader supports version {FORMAT_VERSION}")
    table_end = HEADER.size + n_layers * RECORD.size
    total = table_end + blob_bytes
    if len(buf) < total:
        raise TruncatedError(f"file is {len(buf)} bytes, header declares {total}")
    if len(buf) > total:
        raise SizeMismatchError(f"file is {len(buf)} bytes, header declares {total}")
    if not np.isfinite(tau) or not 0.0 <= tau <= 1.0:
        raise ModelFormatError(f"tau* {tau} outside [0, 1]")
    layers, raw = [], []
    for i in range(n_layers):
        kind_code, flags, filters, size, src, skip, off, count = RECORD.unpack_from(buf, HEADER.size + i * RECORD.size)
        if kind_code not in LAYER_KINDS:
            raise UnknownLayerError(f"layer {i}: unknown layer kind code {kind_code}")
        kind = LAYER_KINDS[kind_code]
        kw = dict(kind=kind, filters=filters, bias=bool(flags & FLAG_BIAS), source=_decode_ref(src),
                  skip=None if skip == 0 else skip - 1)
        if kind == "sepconv":
            kw["kernel_size"] = size
        elif kind in ("maxpool", "avgpool"):
            kw["pool_size"] = size
        elif kind == "dropout":
            kw["dropout_p"] = size / 1000.0
        layers.append(M.LayerSpec(**kw))
        raw.append((off, count))
    name = M.MODEL_NAMES[code] if code < len(M.MODEL_NAMES) else "custom"
    if code != CUSTOM_MODEL_CODE and code >= len(M.MODEL_NAMES):
        raise ModelFormatError(f"unknown model code {code}")
    spec = M.ModelSpec(name, tuple(layers), (length, channels))
    try:
        shapes = M.input_shapes(spec)
    except (ValueError, IndexError) as exc:
        raise ModelFormatError(f"inconsistent layer geometry: {exc}") from None
    if name in M.MODEL_NAMES:
        ref = M.build_spec(name)
        stripped = tuple(M.LayerSpec(**{**vars(l), "group": None}) for l in ref.layers)
        if stripped != spec.layers or ref.input_shape != spec.input_shape:
            raise ModelFormatError(f"layer table does not match the {name} architecture")
        spec = ref
    blob = np.frombuffer(buf, dtype="<f4", offset=table_end)
    blocks = []
    expected_off = 0
    for i, (layer, shape) in enumerate(zip(spec.layers, shapes)):
        off, count = raw[i]
        tensors = _expected_tensors(layer, shape)
        need = sum(int(np.prod(s)) for _, s in tensors)
        if off != expected_off or off % 4:
            raise BadOffsetError(f"layer {i}: blob offset {off}, expected {expected_off}")
        if count != need:
            raise SizeMismatchError(f"layer {i} ({layer.kind}): {count} floats stored, geometry needs {need}")
        if off + 4 * count > blob_bytes:
            raise BadOffsetError(f"layer {i}: tensor data runs past the blob end")
        pos = off // 4
        arrays = {}
        for tname, shp in tensors:
            n = int(np.prod(shp))
            arrays[tname] = blob[pos : pos + n].reshape(shp).astype(np.float32)
            pos += n
        expected_off = off + 4 * count
        if not all(np.all(np.isfinite(a)) for a in arrays.values()):
            raise ModelFormatError(f"layer {i} ({layer.kind}): non-finite weights")
        if "running_var" in arrays and np.any(arrays["running_var"] < 0):
            raise ModelFormatError(f"layer {i}: negative running variance")
        blocks.append(_make_block(layer, arrays))
    if expected_off != blob_bytes:
        raise SizeMismatchError(f"blob holds {blob_bytes} bytes, layers use {expected_off}")
    return DecodedModel(spec, M.ModelParams(blocks), float(tau), version)


def _make_block(layer, a):
    if layer.kind == "sepconv":
        return K.SepConvParams(a["depthwise"], a["pointwise"], a.get("bias"))
    if layer.kind == "batchnorm":
        return K.BatchNormParams(a["gamma"], a["beta"], a["running_mean"], a["running_var"])
    if layer.kind == "conv1x1":
        return K.Conv1x1Params(a["weights"])
    if layer.kind == "dense_softmax":
        return K.DenseParams(a["weights"], a["bias"])
    return None


def fold_batchnorm(block: K.BatchNormParams):
    """Per-channel ``(scale, shift)`` with scale = gamma / sqrt(var + eps), shift = beta - scale * mean."""
    g = np.asarray(block.gamma, dtype=np.float64)
    var = np.asarray(block.running_var, dtype=np.float64)
    mean = np.asarray(block.running_mean, dtype=np.float64)
    scale = g / np.sqrt(var + block.epsilon)
    return scale, np.asarray(block.beta, dtype=np.float64) - scale * mean


# --- arena plan ----------------------------------------------------------------------


@dataclass
class ArenaPlan:
    """Static activation layout, in float32 elements.

    Tensors read only by the next op alternate between the two ends of a
    shared region of ``main_elems`` = max over ops of input + output
    footprint. Tensors that stay live longer (residual skips, an input
    read twice) get pinned slots after it; sepconv scratch follows.
    """

    main_elems: int
    pinned_elems: int
    scratch_elems: int
    tensor_offsets: list  # element offset per tensor (0 = model input, i + 1 = output of op i)
    tensor_sizes: list
    live: list  # (first op, last op) per tensor, closed
    op_io: list  # (input offset, output offset) per op
    scratch_offset: int
    itemsize: int = 4

    @property
    def total_elems(self) -> int:
        return self.main_elems + self.pinned_elems + self.scratch_elems

    @property
    def buffer_bytes(self) -> int:
        return self.total_elems * self.itemsize

    @property
    def main_bytes(self) -> int:
        return self.main_elems * self.itemsize


@dataclass
class _Op:
    kind: int
    l_in: int
    c_in: int
    l_out: int
    c_out: int
    k: int
    src: int  # tensor index of the main input
    aux: int  # tensor index of the second operand, -1 if none
    layer: int  # spec layer index
    weights: tuple = ()  # arrays in engine order


def _lower(spec: M.ModelSpec, params: M.ModelParams) -> list:
    """Turn spec layers into engine ops; dropout vanishes, batch norm becomes affine."""
    shapes = M.infer_shapes(spec)
    in_shapes = M.input_shapes(spec)
    tensor_of = {-1: 0}  # spec layer index (-1 = input) -> tensor index
    ops = []
    for i, layer in enumerate(spec.layers):
        src = tensor_of[M.source_index(spec, i)]
        if layer.kind == "dropout":
            tensor_of[i] = src
            continue
        ishape, oshape = in_shapes[i], shapes[i]
        l_in, c_in = (ishape if len(ishape) == 2 else (1, ishape[0]))
        l_out, c_out = (oshape if len(oshape) == 2 else (1, oshape[0]))
        block = params.layers[i]
        aux, k = -1, 0
        if layer.kind == "sepconv":
            kind, k = P.OP_SEPCONV, layer.kernel_size
            w = (block.depthwise, block.pointwise) + ((block.bias,) if block.bias is not None else ())
        elif layer.kind == "conv1x1":
            kind, w = P.OP_CONV1X1, (block.weights,)
        elif layer.kind == "batchnorm":
            kind, w = P.OP_AFFINE, fold_batchnorm(block)
        elif layer.kind == "relu":
            kind, w = P.OP_RELU, ()
        elif layer.kind in ("maxpool", "avgpool"):
            kind = P.OP_MAXPOOL if layer.kind == "maxpool" else P.OP_AVGPOOL
            k, w = layer.pool_size, ()
        elif layer.kind == "residual_add":
            kind, w, aux = P.OP_ADD, (), tensor_of[layer.skip]
        elif layer.kind == "global_avg_pool":
            kind, w = P.OP_GAP, ()
        elif layer.kind == "dense_softmax":
            kind, w = P.OP_DENSE_SOFTMAX, (block.weights, block.bias)
        else:
            raise ValueError(f"layer kind {layer.kind!r} has no runtime op")
        ops.append(_Op(kind, l_in, c_in, l_out, c_out, k, src, aux, i, w))
        tensor_of[i] = len(ops)  # op j writes tensor j + 1
    return ops


def plan_arena(ops: list, input_size: int) -> ArenaPlan:
    n_t = len(ops) + 1
    sizes = [input_size] + [op.l_out * op.c_out for op in ops]
    consumers = [[] for _ in range(n_t)]
    for j, op in enumerate(ops):
        consumers[op.src].append(j)
        if op.aux >= 0:
            consumers[op.aux].append(j)
    # tensor t is defined at op t - 1 (the input at op -1)
    live = [(t - 1, max(consumers[t]) if consumers[t] else t - 1) for t in range(n_t)]
    chain = [len(consumers[t]) <= 1 and live[t][1] <= live[t][0] + 1 for t in range(n_t)]
    main = 0
    for j, op in enumerate(ops):
        a = max(sizes[t] if (t >= 0 and chain[t]) else 0 for t in (op.src, op.aux))
        b = sizes[j + 1] if chain[j + 1] else 0
        main = max(main, a + b, sizes[j + 1] if chain[j + 1] else 0)
    offsets = [0] * n_t
    low = True
    for t in range(n_t):
        if chain[t]:
            offsets[t] = 0 if low else main - sizes[t]
            low = not low
    # pinned tensors: first-fit reuse of slots whose occupant is dead
    slot_size = max([sizes[t] for t in range(n_t) if not chain[t]], default=0)
    slot_free_after = []
    for t in range(n_t):
        if chain[t]:
            continue
        for s, last in enumerate(slot_free_after):
            if last < live[t][0]:
                break
        else:
            s = len(slot_free_after)
            slot_free_after.append(-2)
        slot_free_after[s] = live[t][1]
        offsets[t] = main + s * slot_size
    pinned = slot_size * len(slot_free_after)
    scratch = 0
    for op in ops:
        if op.kind == P.OP_SEPCONV:
            # depthwise output, then (numpy engine) padded input and a tap product
            scratch = max(scratch, op.l_in * op.c_in * 2 + (op.l_in + op.k - 1) * op.c_in)
    op_io = [(offsets[op.src], offsets[j + 1]) for j, op in enumerate(ops)]
    plan = ArenaPlan(main, pinned, scratch, offsets, sizes, live, op_io, main + pinned)
    check_plan(plan)
    return plan


def check_plan(plan: ArenaPlan) -> None:
    """Assert that no two simultaneously live tensors share memory."""
    n = len(plan.tensor_sizes)
    for a in range(n):
        ra = (plan.tensor_offsets[a], plan.tensor_offsets[a] + plan.tensor_sizes[a])
        assert 0 <= ra[0] and ra[1] <= plan.scratch_offset, f"tensor {a} outside the activation region"
        for b in range(a + 1, n):
            la, lb = plan.live[a], plan.live[b]
            if la[1] < lb[0] or lb[1] < la[0]:
                continue
            rb = (plan.tensor_offsets[b], plan.tensor_offsets[b] + plan.tensor_sizes[b])
            assert ra[1] <= rb[0] or rb[1] <= ra[0], f"live tensors {a} and {b} overlap in the arena"


def _compile(ops: list, plan: ArenaPlan, dtype):
    table = np.full((len(ops), P.N_COLS), -1, dtype=np.int64)
    chunks = []
    pos = 0
    for j, op in enumerate(ops):
        row = table[j]
        row[P.KIND], row[P.L_IN], row[P.C_IN], row[P.L_OUT], row[P.C_OUT], row[P.K] = (
            op.kind, op.l_in, op.c_in, op.l_out, op.c_out, op.k)
        row[P.IN] = plan.tensor_offsets[op.src]
        row[P.OUT] = plan.tensor_offsets[j + 1]
        if op.aux >= 0:
            row[P.AUX] = plan.tensor_offsets[op.aux]
        cols = {
            P.OP_SEPCONV: (P.W, P.W2, P.B),
            P.OP_CONV1X1: (P.W,),
            P.OP_AFFINE: (P.W, P.W2),
            P.OP_DENSE_SOFTMAX: (P.W, P.B),
        }.get(op.kind, ())
        for col, arr in zip(cols, op.weights):
            row[col] = pos
            flat = np.asarray(arr, dtype=np.float64).ravel()
            chunks.append(flat)
            pos += flat.size
        if op.kind == P.OP_SEPCONV:
            row[P.SCR1] = plan.scratch_offset
            row[P.SCR2] = plan.scratch_offset + op.l_in * op.c_in
    weights = np.concatenate(chunks).astype(dtype) if chunks else np.zeros(0, dtype)
    return table, weights


# --- runtime model ---------------------------------------------------------------------


class RuntimeModel:
    """A loaded model: immutable weights and op table plus a default arena.

    ``infer`` is reentrant as long as each thread passes its own arena from
    ``new_arena``; the default arena serves single-threaded callers.
    """

    def __init__(self, decoded: DecodedModel, binary: bytes, dtype=np.float32, engine: Optional[str] = None):
        self.spec = decoded.spec
        self.params = decoded.params
        self.tau = decoded.tau
        self.binary = bytes(binary)
        self.dtype = np.dtype(dtype)
        if engine is None:
            engine = _backend.NAME if self.dtype == np.float32 else "python"
        if engine == "cython" and self.dtype != np.float32:
            raise ValueError("the compiled engine runs float32 only")
        mods = _backend.available()
        if engine not in mods:
            raise ValueError(f"engine {engine!r} unavailable; have {sorted(mods)}")
        self.engine_name = engine
        ops = _lower(self.spec, self.params)
        length, channels = self.spec.input_shape
        self.plan = plan_arena(ops, length * channels)
        self.plan.itemsize = self.dtype.itemsize
        self.ops, self.weights = _compile(ops, self.plan, self.dtype)
        self.out_offset = int(self.ops[-1][P.OUT])
        self._engine = mods[engine].Engine(self.ops, self.weights, self.out_offset)
        self.arena = self.new_arena()

    @property
    def name(self) -> str:
        return self.spec.name

    def new_arena(self) -> np.ndarray:
        return np.zeros(self.plan.total_elems, dtype=self.dtype)

    def _check(self, window):
        if not isinstance(window, np.ndarray) or window.shape != tuple(self.spec.input_shape):
            raise K.ContractError(f"window must be an array of shape {self.spec.input_shape}, "
                                  f"got {getattr(window, 'shape', type(window).__name__)}")
        if window.dtype != self.dtype or not window.flags.c_contiguous:
            window = np.ascontiguousarray(window, dtype=self.dtype)
        return window

    def p_gait(self, window, arena=None) -> float:
        return self._engine.run(self._check(window), self.arena if arena is None else arena)

    def infer(self, window, arena=None):
        """``(p_gait, decision)`` with decision 1 (gait) iff p_gait >= tau*."""
        p = self.p_gait(window, arena)
        return p, int(p >= self.tau)

    def probabilities(self, window, arena=None) -> np.ndarray:
        arena = self.arena if arena is None else arena
        self.p_gait(window, arena)
        return arena[self.out_offset : self.out_offset + 2].copy()


def load(buf: bytes, dtype=np.float32, engine: Optional[str] = None) -> RuntimeModel:
    return RuntimeModel(decode(buf), buf, dtype, engine)


def load_file(path, **kw) -> RuntimeModel:
    with open(path, "rb") as fh:
        return load(fh.read(), **kw)


def profile(runtime: RuntimeModel, n_reps: int = 1000, seed: int = 0) -> dict:
    """MACs, footprint and host latency of single-window inference.

    Latency uses a monotonic clock around each call; the first 10 calls
    warm caches and are discarded.
    """
    if n_reps < 100:
        raise ValueError("profiling needs n_reps >= 100")
    rng = np.random.default_rng(seed)
    window = np.ascontiguousarray(rng.standard_normal(runtime.spec.input_shape) * 0.2, dtype=runtime.dtype)
    arena = runtime.new_arena()
    run = runtime._engine.run
    times = np.empty(n_reps)
    clock = time.perf_counter_ns
    for _ in range(10):
        run(window, arena)
    for r in range(n_reps):
        t0 = clock()
        run(window, arena)
        times[r] = clock() - t0
    times /= 1000.0
    return {
        "model": runtime.name,
        "macs": M.count_macs(runtime.spec),
        "params": M.count_params(runtime.spec),
        "peak_arena_bytes": runtime.plan.buffer_bytes,
        "flash_bytes": len(runtime.binary),
        "mean_latency_us": float(times.mean()),
        "p95_latency_us": float(np.percentile(times, 95)),
        "engine": runtime.engine_name,
    }


__all__ = [
    "ArenaPlan", "BadMagicError", "BadOffsetError", "DecodedModel", "ExportError", "ModelFormatError",
    "RuntimeModel", "SizeMismatchError", "TruncatedError", "UnknownLayerError", "VersionMismatchError",
    "check_plan", "decode", "export", "fold_batchnorm", "load", "load_file", "plan_arena", "profile",
]
