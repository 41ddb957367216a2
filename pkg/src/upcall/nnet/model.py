"""Pre-activation residual network for two-class spectrogram classification.

Topology: stem convolution, ``n_blocks`` residual blocks, then batch norm,
ReLU, global average pooling and a dense softmax layer. A block is
BN-ReLU-conv3x3-BN-ReLU-conv3x3 added to its input (through a 1x1
projection when the shape changes). Every second block after the first
stage halves the spatial resolution.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..signal import SEGMENT_SHAPE
from . import layers as L

_MAGIC = b"RNET"


@dataclass(frozen=True)
class NetConfig:
    n_blocks: int = 8
    channels: tuple = (16, 32, 64, 128)
    input_shape: tuple = SEGMENT_SHAPE
    n_classes: int = 2
    stem_stride: int = 2
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be at least 1")
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError("channel counts must be positive")
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise ValueError(f"bad input shape {self.input_shape}")
        if self.n_classes < 2 or self.stem_stride < 1:
            raise ValueError("need n_classes >= 2 and stem_stride >= 1")

    @classmethod
    def tiny(cls, **kw) -> NetConfig:
        kw.setdefault("n_blocks", 2)
        kw.setdefault("channels", (8,))
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> NetConfig:
        return cls(**kw)

    def stage_of(self, block: int) -> int:
        return min(block // 2, len(self.channels) - 1)

    def block_layout(self) -> list[tuple[int, int, int]]:
        """(c_in, c_out, stride) for every residual block."""
        out = []
        c_prev = self.channels[0]
        for i in range(self.n_blocks):
            stage = self.stage_of(i)
            stride = 2 if i > 0 and i % 2 == 0 and stage > self.stage_of(i - 1) else 1
            c = self.channels[stage]
            out.append((c_prev, c, stride))
            c_prev = c
        return out


@dataclass
class NetParams:
    config: NetConfig
    weights: dict = field(default_factory=dict)  # trainable, declaration order
    buffers: dict = field(default_factory=dict)  # batch-norm running statistics

    def copy(self) -> NetParams:
        return NetParams(self.config, {k: v.copy() for k, v in self.weights.items()},
                         {k: v.copy() for k, v in self.buffers.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.weights.values())


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_model(cfg: NetConfig) -> NetParams:
    """Deterministic He-normal weights; BN scale 1 and shift 0."""
    rng = np.random.default_rng(cfg.seed)
    dt = np.dtype(cfg.dtype)
    p = NetParams(cfg)
    w, buf = p.weights, p.buffers

    def bn(name, c):
        w[f"{name}.gamma"] = np.ones(c, dt)
        w[f"{name}.beta"] = np.zeros(c, dt)
        buf[f"{name}.mean"] = np.zeros(c, dt)
        buf[f"{name}.var"] = np.ones(c, dt)

    c0 = cfg.channels[0]
    w["stem.w"] = _he(rng, (3, 3, 1, c0), 9, dt)
    w["stem.b"] = np.zeros(c0, dt)
    for i, (cin, cout, stride) in enumerate(cfg.block_layout()):
        bn(f"block{i}.bn1", cin)
        w[f"block{i}.conv1.w"] = _he(rng, (3, 3, cin, cout), 9 * cin, dt)
        bn(f"block{i}.bn2", cout)
        w[f"block{i}.conv2.w"] = _he(rng, (3, 3, cout, cout), 9 * cout, dt)
        if cin != cout or stride != 1:
            w[f"block{i}.proj.w"] = _he(rng, (1, 1, cin, cout), cin, dt)
    c_last = cfg.channels[cfg.stage_of(cfg.n_blocks - 1)]
    bn("head.bn", c_last)
    w["head.dense.w"] = _he(rng, (c_last, cfg.n_classes), c_last, dt)
    w["head.dense.b"] = np.zeros(cfg.n_classes, dt)
    return p


def _check_batch(params: NetParams, x: np.ndarray, train: bool) -> np.ndarray:
    x = np.asarray(x)
    shape = params.config.input_shape
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != shape:
        raise DataError(f"expected a batch of {shape} spectrograms, got array of shape {x.shape}")
    if x.shape[0] == 0:
        raise DataError("empty batch")
    if train and x.shape[0] < 2:
        raise DataError("train-mode forward needs at least two samples for batch statistics")
    return x.astype(params.config.dtype, copy=False)[..., None]


def forward(params: NetParams, batch, mode: str = "eval", return_cache: bool = False):
    """Class probabilities, shape (B, n_classes).

    Train mode uses batch statistics and updates the running estimates held in
    ``params.buffers``; eval mode uses the running estimates only.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    w, buf = params.weights, params.buffers
    x = _check_batch(params, batch, train)
    caches = {}

    def bn(name, h):
        y, caches[name] = L.bn_forward(h, w[f"{name}.gamma"], w[f"{name}.beta"],
                                       buf[f"{name}.mean"], buf[f"{name}.var"], train)
        return y

    h, caches["stem"] = L.conv_forward(x, w["stem.w"], w["stem.b"], params.config.stem_stride)
    for i, (_, _, stride) in enumerate(params.config.block_layout()):
        p = f"block{i}"
        a, caches[f"{p}.relu1"] = L.relu_forward(bn(f"{p}.bn1", h))
        r, caches[f"{p}.conv1"] = L.conv_forward(a, w[f"{p}.conv1.w"], None, stride)
        r, caches[f"{p}.relu2"] = L.relu_forward(bn(f"{p}.bn2", r))
        r, caches[f"{p}.conv2"] = L.conv_forward(r, w[f"{p}.conv2.w"], None, 1)
        if f"{p}.proj.w" in w:
            s, caches[f"{p}.proj"] = L.conv_forward(a, w[f"{p}.proj.w"], None, stride)
        else:
            s = h
        h = r + s
    h, caches["head.relu"] = L.relu_forward(bn("head.bn", h))
    h, caches["gap"] = L.gap_forward(h)
    logits, caches["dense"] = L.dense_forward(h, w["head.dense.w"], w["head.dense.b"])
    probs = L.softmax(logits)
    return (probs, caches) if return_cache else probs


def backward_from_cache(params: NetParams, caches: dict, dlogits: np.ndarray) -> dict:
    w = params.weights
    g = {}
    dh, g["head.dense.w"], g["head.dense.b"] = L.dense_backward(dlogits, caches["dense"], w["head.dense.w"])
    dh = L.gap_backward(dh, caches["gap"])
    dh = L.relu_backward(dh, caches["head.relu"])
    dh, g["head.bn.gamma"], g["head.bn.beta"] = L.bn_backward(dh, caches["head.bn"])
    for i in reversed(range(params.config.n_blocks)):
        p = f"block{i}"
        dr, g[f"{p}.conv2.w"], _ = L.conv_backward(dh, caches[f"{p}.conv2"], w[f"{p}.conv2.w"])
        dr = L.relu_backward(dr, caches[f"{p}.relu2"])
        dr, g[f"{p}.bn2.gamma"], g[f"{p}.bn2.beta"] = L.bn_backward(dr, caches[f"{p}.bn2"])
        da, g[f"{p}.conv1.w"], _ = L.conv_backward(dr, caches[f"{p}.conv1"], w[f"{p}.conv1.w"])
        if f"{p}.proj.w" in w:
            dp, g[f"{p}.proj.w"], _ = L.conv_backward(dh, caches[f"{p}.proj"], w[f"{p}.proj.w"])
            da = da + dp
            dskip = 0.0
        else:
            dskip = dh
        da = L.relu_backward(da, caches[f"{p}.relu1"])
        dx, g[f"{p}.bn1.gamma"], g[f"{p}.bn1.beta"] = L.bn_backward(da, caches[f"{p}.bn1"])
        dh = dx + dskip
    _, g["stem.w"], g["stem.b"] = L.conv_backward(dh, caches["stem"], w["stem.w"])
    return {k: g[k] for k in w}


def loss_and_grads(params: NetParams, batch, labels) -> tuple[float, dict, np.ndarray]:
    """Mean cross-entropy, its gradient per parameter, and the train-mode probabilities."""
    labels = np.asarray(labels).astype(int)
    probs, caches = forward(params, batch, "train", return_cache=True)
    if labels.shape != (probs.shape[0],):
        raise DataError(f"{labels.size} labels for a batch of {probs.shape[0]}")
    loss, dlogits = L.cross_entropy(probs, labels)
    return loss, backward_from_cache(params, caches, dlogits), probs


def backward(params: NetParams, batch, labels) -> dict:
    return loss_and_grads(params, batch, labels)[1]


class ResNetClassifier:
    """Eval-mode scorer mapping spectrogram batches to positive-class probability."""

    def __init__(self, params: NetParams, chunk: int = 256):
        self.params = params
        self.chunk = chunk

    def __call__(self, specs) -> np.ndarray:
        specs = np.asarray(specs)
        if specs.ndim == 2:
            specs = specs[None]
        out = [forward(self.params, specs[i:i + self.chunk], "eval")[:, 1]
               for i in range(0, len(specs), self.chunk)]
        return np.concatenate(out).astype(np.float64)


def save_model(path, params: NetParams) -> None:
    cfg = json.dumps(asdict(params.config), sort_keys=True).encode()
    parts = [_MAGIC, struct.pack("<I", len(cfg)), cfg]
    tensors = list(params.weights.items()) + list(params.buffers.items())
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        key = name.encode()
        parts.append(struct.pack("<I", len(key)) + key + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> NetParams:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise DataError(f"{path}: not a residual-network model file")
    try:
        (n,) = struct.unpack_from("<I", data, 4)
        cfg = NetConfig(**json.loads(data[8:8 + n]))
        off = 8 + n
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        arrays = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", data, off)
            name = data[off + 4:off + 4 + klen].decode()
            off += 4 + klen
            (ndim,) = struct.unpack_from("<I", data, off)
            shape = struct.unpack_from(f"<{ndim}I", data, off + 4)
            off += 4 + 4 * ndim
            size = int(np.prod(shape))
            arrays[name] = np.frombuffer(data, "<f4", size, off).reshape(shape).astype(cfg.dtype)
            off += 4 * size
    except (struct.error, ValueError, TypeError) as exc:
        raise DataError(f"{path}: corrupt model file ({exc})") from None
    template = init_model(cfg)
    params = NetParams(cfg)
    for k in template.weights:
        params.weights[k] = arrays[k]
    for k in template.buffers:
        params.buffers[k] = arrays[k]
    return params
