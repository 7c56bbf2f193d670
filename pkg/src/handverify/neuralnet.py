"""A small dense/convolutional network engine on plain numpy.

The layer catalog is fixed: conv2d (3x3, stride 1, same or valid
padding), maxpool2x2 (stride 2), dense, relu, sigmoid, softmax, flatten,
and reshape. A network is a list of LayerSpec entries; parameters live in
an ordered name -> array dict so they serialize and update generically.

forward() returns the output plus a cache holding exactly what backward()
needs to produce analytic gradients for every parameter and the input.
Compute dtype follows the parameter arrays: training runs in float32,
gradient checks in float64. Loss reductions always accumulate in 64-bit.

Batched activations use the (batch, channels, height, width) layout for
convolutional stacks and (batch, features) for dense stacks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError, ShapeError

MODEL_MAGIC = b"HVNN"
MODEL_VERSION = 1
PROB_EPS = 1e-7


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int = 0  # conv2d output channels
    padding: str = "same"  # conv2d: same | valid
    units: int = 0  # dense width
    shape: tuple[int, ...] = ()  # reshape target (per sample)


def conv2d(channels: int, padding: str = "same") -> LayerSpec:
    if padding not in ("same", "valid"):
        raise ShapeError(f"conv2d padding must be same or valid, got {padding!r}")
    return LayerSpec(kind="conv2d", channels=channels, padding=padding)


def maxpool() -> LayerSpec:
    return LayerSpec(kind="maxpool2x2")


def dense(units: int) -> LayerSpec:
    return LayerSpec(kind="dense", units=units)


def relu() -> LayerSpec:
    return LayerSpec(kind="relu")


def sigmoid() -> LayerSpec:
    return LayerSpec(kind="sigmoid")


def softmax() -> LayerSpec:
    return LayerSpec(kind="softmax")


def flatten() -> LayerSpec:
    return LayerSpec(kind="flatten")


def reshape(*shape: int) -> LayerSpec:
    return LayerSpec(kind="reshape", shape=tuple(shape))


@dataclass
class ModelParams:
    """Ordered named parameter tensors plus a hyperparameter record."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)


def _err(i: int, spec: LayerSpec, msg: str) -> ShapeError:
    return ShapeError(f"layer {i} ({spec.kind}): {msg}")


def infer_shapes(spec: list[LayerSpec], input_shape: tuple[int, ...]) -> list[tuple]:
    """Per-sample output shape after each layer; raises naming the layer."""
    shapes = []
    cur = tuple(input_shape)
    for i, layer in enumerate(spec):
        k = layer.kind
        if k == "conv2d":
            if len(cur) != 3:
                raise _err(i, layer, f"needs (C, H, W) input, got {cur}")
            c, h, w = cur
            if layer.padding == "same":
                cur = (layer.channels, h, w)
            else:
                if h < 3 or w < 3:
                    raise _err(i, layer, f"valid padding needs >= 3x3, got {h}x{w}")
                cur = (layer.channels, h - 2, w - 2)
        elif k == "maxpool2x2":
            if len(cur) != 3:
                raise _err(i, layer, f"needs (C, H, W) input, got {cur}")
            c, h, w = cur
            if h % 2 or w % 2 or h < 2 or w < 2:
                raise _err(i, layer, f"needs even spatial dims, got {h}x{w}")
            cur = (c, h // 2, w // 2)
        elif k == "dense":
            if len(cur) != 1:
                raise _err(i, layer, f"needs flat input, got {cur}")
            cur = (layer.units,)
        elif k in ("relu", "sigmoid", "softmax"):
            if k == "softmax" and len(cur) != 1:
                raise _err(i, layer, f"needs flat input, got {cur}")
            pass
        elif k == "flatten":
            cur = (int(np.prod(cur)),)
        elif k == "reshape":
            if int(np.prod(cur)) != int(np.prod(layer.shape)):
                raise _err(
                    i, layer, f"cannot reshape {cur} to {layer.shape} (size mismatch)"
                )
            cur = tuple(layer.shape)
        else:
            raise _err(i, layer, "unknown layer kind")
        shapes.append(cur)
    return shapes


def init_params(
    spec: list[LayerSpec],
    input_shape: tuple[int, ...],
    rng: np.random.Generator,
    dtype=np.float32,
    prefix: str = "",
) -> dict[str, np.ndarray]:
    """He-uniform weights where the next layer is a ReLU, Glorot elsewhere."""
    shapes = infer_shapes(spec, input_shape)
    params: dict[str, np.ndarray] = {}
    cur = tuple(input_shape)
    for i, layer in enumerate(spec):
        feeds_relu = i + 1 < len(spec) and spec[i + 1].kind == "relu"
        if layer.kind == "conv2d":
            c_in = cur[0]
            fan_in = c_in * 9
            fan_out = layer.channels * 9
            limit = (
                np.sqrt(6.0 / fan_in)
                if feeds_relu
                else np.sqrt(6.0 / (fan_in + fan_out))
            )
            w = rng.uniform(-limit, limit, size=(layer.channels, c_in, 3, 3))
            params[f"{prefix}layer{i}.w"] = w.astype(dtype)
            params[f"{prefix}layer{i}.b"] = np.zeros(layer.channels, dtype=dtype)
        elif layer.kind == "dense":
            fan_in = cur[0]
            fan_out = layer.units
            limit = (
                np.sqrt(6.0 / fan_in)
                if feeds_relu
                else np.sqrt(6.0 / (fan_in + fan_out))
            )
            w = rng.uniform(-limit, limit, size=(fan_in, layer.units))
            params[f"{prefix}layer{i}.w"] = w.astype(dtype)
            params[f"{prefix}layer{i}.b"] = np.zeros(layer.units, dtype=dtype)
        cur = shapes[i]
    return params


def _im2col(x: np.ndarray) -> np.ndarray:
    # x already padded; returns (B, C*9, Ho*Wo) with the C*9 axis ordered
    # (channel, ky, kx) to match weight.reshape(K, C*9). Windowing over the
    # output plane keeps the copy sequential instead of gathering 3x3 tiles.
    b, c, h, w = x.shape
    ho, wo = h - 2, w - 2
    windows = np.lib.stride_tricks.sliding_window_view(x, (ho, wo), axis=(2, 3))
    return windows.reshape(b, c * 9, ho * wo)


def _conv_forward(x, w, bias, padding):
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1))) if padding == "same" else x
    b = x.shape[0]
    k = w.shape[0]
    ho, wo = xp.shape[2] - 2, xp.shape[3] - 2
    cols = _im2col(xp)
    w2 = w.reshape(k, -1)
    out = np.matmul(w2, cols) + bias[None, :, None]
    return out.reshape(b, k, ho, wo)


def _conv_backward(x, w, dy, padding):
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1))) if padding == "same" else x
    b, c = x.shape[0], x.shape[1]
    k = w.shape[0]
    ho, wo = xp.shape[2] - 2, xp.shape[3] - 2
    cols = _im2col(xp)
    dyf = dy.reshape(b, k, ho * wo)

    # batched gemm on the strided transpose avoids materializing cols twice
    dw = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dyf.sum(axis=(0, 2))

    w2 = w.reshape(k, -1)
    dcols = np.matmul(w2.T, dyf)  # (B, C*9, Ho*Wo)
    dcols = dcols.reshape(b, c, 3, 3, ho, wo)
    dxp = np.zeros_like(xp)
    for ky in range(3):
        for kx in range(3):
            dxp[:, :, ky : ky + ho, kx : kx + wo] += dcols[:, :, ky, kx]
    dx = dxp[:, :, 1:-1, 1:-1] if padding == "same" else dxp
    return dw, db, dx


def forward(
    spec: list[LayerSpec],
    params: ModelParams | dict,
    x: np.ndarray,
    prefix: str = "",
):
    """Run the network; returns (output, cache) for a later backward()."""
    tensors = params.tensors if isinstance(params, ModelParams) else params
    x = np.asarray(x)
    if x.ndim < 2:
        raise ShapeError(f"input must be batched, got shape {x.shape}")
    infer_shapes(spec, x.shape[1:])  # validate against declared layer chain

    saved: list[dict] = []
    cur = x
    for i, layer in enumerate(spec):
        k = layer.kind
        if k == "conv2d":
            w = tensors[f"{prefix}layer{i}.w"]
            bias = tensors[f"{prefix}layer{i}.b"]
            if w.shape[1] != cur.shape[1]:
                raise _err(i, layer, f"weight expects {w.shape[1]} channels, "
                                     f"input has {cur.shape[1]}")
            saved.append({"x": cur})
            cur = _conv_forward(cur, w, bias, layer.padding)
        elif k == "maxpool2x2":
            # comparison tree over the four window corners; >= keeps the
            # first maximum in row-major window order, like argmax would
            nw = cur[:, :, 0::2, 0::2]
            ne = cur[:, :, 0::2, 1::2]
            sw = cur[:, :, 1::2, 0::2]
            se = cur[:, :, 1::2, 1::2]
            top = nw >= ne
            v_top = np.where(top, nw, ne)
            i_top = np.where(top, np.uint8(0), np.uint8(1))
            bot = sw >= se
            v_bot = np.where(bot, sw, se)
            i_bot = np.where(bot, np.uint8(2), np.uint8(3))
            pick = v_top >= v_bot
            idx = np.where(pick, i_top, i_bot)
            saved.append({"idx": idx, "in_shape": cur.shape})
            cur = np.where(pick, v_top, v_bot)
        elif k == "dense":
            w = tensors[f"{prefix}layer{i}.w"]
            bias = tensors[f"{prefix}layer{i}.b"]
            if cur.shape[1] != w.shape[0]:
                raise _err(i, layer, f"weight expects width {w.shape[0]}, "
                                     f"input has {cur.shape[1]}")
            saved.append({"x": cur})
            cur = cur @ w + bias
        elif k == "relu":
            saved.append({"mask": cur > 0})
            cur = np.maximum(cur, 0)
        elif k == "sigmoid":
            out = np.empty_like(cur)
            pos = cur >= 0
            out[pos] = 1.0 / (1.0 + np.exp(-cur[pos]))
            ex = np.exp(cur[~pos])
            out[~pos] = ex / (1.0 + ex)
            saved.append({"y": out})
            cur = out
        elif k == "softmax":
            shifted = cur - cur.max(axis=-1, keepdims=True)
            e = np.exp(shifted)
            out = e / e.sum(axis=-1, keepdims=True)
            saved.append({"y": out})
            cur = out
        elif k == "flatten":
            saved.append({"in_shape": cur.shape})
            cur = cur.reshape(cur.shape[0], -1)
        elif k == "reshape":
            saved.append({"in_shape": cur.shape})
            cur = cur.reshape((cur.shape[0],) + layer.shape)
        else:
            raise _err(i, layer, "unknown layer kind")

    cache = {
        "spec": spec,
        "tensors": tensors,
        "prefix": prefix,
        "saved": saved,
        "out_shape": cur.shape,
        "valid": True,
    }
    return cur, cache


def backward(cache: dict, upstream: np.ndarray):
    """Analytic gradients from a forward cache.

    Returns (grads, dx) where grads maps every parameter name of the
    cached network to its gradient and dx is the input gradient.
    """
    if not isinstance(cache, dict) or not cache.get("valid"):
        raise ContractError("backward needs the cache of a matching forward call")
    upstream = np.asarray(upstream)
    if upstream.shape != cache["out_shape"]:
        raise ContractError(
            f"upstream gradient shape {upstream.shape} does not match "
            f"forward output {cache['out_shape']}"
        )
    spec = cache["spec"]
    tensors = cache["tensors"]
    prefix = cache["prefix"]
    saved = cache["saved"]

    grads: dict[str, np.ndarray] = {}
    dy = upstream
    for i in range(len(spec) - 1, -1, -1):
        layer = spec[i]
        k = layer.kind
        cell = saved[i]
        if k == "conv2d":
            w = tensors[f"{prefix}layer{i}.w"]
            dw, db, dy = _conv_backward(cell["x"], w, dy, layer.padding)
            grads[f"{prefix}layer{i}.w"] = dw
            grads[f"{prefix}layer{i}.b"] = db
        elif k == "maxpool2x2":
            idx = cell["idx"]
            zero = dy.dtype.type(0)
            dx = np.empty(cell["in_shape"], dtype=dy.dtype)
            dx[:, :, 0::2, 0::2] = np.where(idx == 0, dy, zero)
            dx[:, :, 0::2, 1::2] = np.where(idx == 1, dy, zero)
            dx[:, :, 1::2, 0::2] = np.where(idx == 2, dy, zero)
            dx[:, :, 1::2, 1::2] = np.where(idx == 3, dy, zero)
            dy = dx
        elif k == "dense":
            x = cell["x"]
            w = tensors[f"{prefix}layer{i}.w"]
            grads[f"{prefix}layer{i}.w"] = x.T @ dy
            grads[f"{prefix}layer{i}.b"] = dy.sum(axis=0)
            dy = dy @ w.T
        elif k == "relu":
            dy = dy * cell["mask"]
        elif k == "sigmoid":
            y = cell["y"]
            dy = dy * y * (1.0 - y)
        elif k == "softmax":
            y = cell["y"]
            dot = (dy * y).sum(axis=-1, keepdims=True)
            dy = y * (dy - dot)
        elif k in ("flatten", "reshape"):
            dy = dy.reshape(cell["in_shape"])
    return grads, dy


def cce_loss(probabilities, target: int) -> float:
    """Categorical cross entropy -ln p[target] on clamped probabilities."""
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    if not 0 <= target < p.size:
        raise ContractError(f"target {target} out of range for {p.size} classes")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise ContractError("probabilities must sum to 1")
    clamped = min(max(float(p[target]), PROB_EPS), 1.0 - PROB_EPS)
    return -float(np.log(clamped))


def cce_loss_mean(probs: np.ndarray, targets: np.ndarray):
    """Mean CCE over a batch plus its gradient w.r.t. the probabilities."""
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=np.int64)
    b = probs.shape[0]
    if targets.shape != (b,) or targets.min() < 0 or targets.max() >= probs.shape[1]:
        raise ContractError("targets must index the probability columns")
    rows = np.arange(b)
    picked = np.maximum(probs[rows, targets].astype(np.float64), PROB_EPS)
    picked = np.minimum(picked, 1.0 - PROB_EPS)
    loss = float(np.mean(-np.log(picked), dtype=np.float64))
    dprobs = np.zeros_like(probs)
    dprobs[rows, targets] = (-1.0 / (b * picked)).astype(probs.dtype)
    return loss, dprobs


def mae_loss(reconstruction, original) -> float:
    """Mean absolute deviation between two same-shape tensors."""
    r = np.asarray(reconstruction)
    o = np.asarray(original)
    if r.shape != o.shape:
        raise ShapeError(f"shape mismatch {r.shape} vs {o.shape}")
    return float(np.mean(np.abs(r.astype(np.float64) - o.astype(np.float64))))


def mae_loss_grad(reconstruction, original):
    """(loss, d loss / d reconstruction) for the mean absolute error."""
    r = np.asarray(reconstruction)
    o = np.asarray(original)
    if r.shape != o.shape:
        raise ShapeError(f"shape mismatch {r.shape} vs {o.shape}")
    diff = r.astype(np.float64) - o.astype(np.float64)
    loss = float(np.mean(np.abs(diff)))
    grad = (np.sign(diff) / diff.size).astype(r.dtype)
    return loss, grad


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One in-place Adam update with bias correction."""
    state.t += 1
    t = state.t
    for name, g in grads.items():
        p = tensors[name]
        if p.shape != g.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, "
                             f"parameter has {p.shape}")
        g = g.astype(p.dtype, copy=False)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
    return state


def save_model(params: ModelParams) -> bytes:
    """Serialize to the binary model container.

    Layout: magic "HVNN", u32 version, u32 tensor count; per tensor a u16
    name length, UTF-8 name, u8 rank, u32 dims, row-major little-endian
    float32 payload; finally a u32-length-prefixed canonical JSON record
    of the hyperparameters. All integers little-endian.
    """
    out = bytearray(MODEL_MAGIC)
    out += struct.pack("<I", MODEL_VERSION)
    out += struct.pack("<I", len(params.tensors))
    for name, arr in params.tensors.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:32]!r}...")
        a = np.asarray(arr, dtype="<f4")  # keeps rank 0 intact; tobytes copies C-order
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", a.ndim)
        out += struct.pack(f"<{a.ndim}I", *a.shape)
        out += a.tobytes()
    hyper = json.dumps(params.hyper, sort_keys=True, separators=(",", ":"))
    hb = hyper.encode("utf-8")
    out += struct.pack("<I", len(hb)) + hb
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", offset=self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u(self, fmt: str, what: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def load_model(data: bytes) -> ModelParams:
    """Parse a model container; inverse of save_model (bit-exact round trip)."""
    r = _Reader(bytes(data))
    magic = r.take(4, "magic")
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    version = r.u("<I", "version")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    count = r.u("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u("<H", "name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        rank = r.u("<B", "rank")
        dims = tuple(r.u("<I", "dim") for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        payload = r.take(4 * n, f"payload of {name!r}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", offset=r.pos)
        tensors[name] = arr
    hyper_len = r.u("<I", "hyperparameter length")
    hyper_raw = r.take(hyper_len, "hyperparameters")
    try:
        hyper = json.loads(hyper_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"bad hyperparameter block: {e}",
                          offset=r.pos - hyper_len) from None
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after model", offset=r.pos)
    return ModelParams(tensors=tensors, hyper=hyper)
