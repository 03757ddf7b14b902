"""Compact classifier and segmenter with explicit forward/backward passes.

Classifier: conv3x3-ReLU-maxpool2 blocks (by default 8, 16, 32, 64
channels), global average pooling, affine head to 5 logits.

Segmenter: a two-level U-shaped net. Two conv3x3-ReLU-maxpool2 down blocks,
then two nearest-upsample + conv3x3 blocks that also see the matching
encoder features; the last conv has one channel and a sigmoid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError, StateError
from . import layers as L
from .rng import stream

CLASSIFIER_CHANNELS = (8, 16, 32, 64)
SEGMENTER_CHANNELS = (8, 16)


def classifier_arch(input_hw=(96, 128), in_channels=1, n_out=5, channels=CLASSIFIER_CHANNELS) -> dict:
    return {"kind": "classifier", "in_channels": int(in_channels), "input_hw": [int(v) for v in input_hw],
            "channels": [int(c) for c in channels], "kernel": 3, "n_out": int(n_out)}


def segmenter_arch(input_hw=(192, 256), in_channels=1, channels=SEGMENTER_CHANNELS) -> dict:
    return {"kind": "segmenter", "in_channels": int(in_channels), "input_hw": [int(v) for v in input_hw],
            "channels": [int(c) for c in channels], "kernel": 3}


def canonical_arch(arch: dict) -> str:
    return json.dumps(arch, sort_keys=True, separators=(",", ":"))


def param_specs(arch: dict) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) of every parameter tensor implied by ``arch``."""
    if arch.get("kernel") != 3:
        raise ParameterError("only 3x3 kernels are supported")
    cin = arch["in_channels"]
    ch = list(arch["channels"])
    specs = []
    if arch["kind"] == "classifier":
        prev = cin
        for i, c in enumerate(ch):
            specs += [(f"conv{i + 1}.w", (3, 3, prev, c)), (f"conv{i + 1}.b", (c,))]
            prev = c
        specs += [("head.w", (prev, arch["n_out"])), ("head.b", (arch["n_out"],))]
    elif arch["kind"] == "segmenter":
        c1, c2 = ch
        specs += [("down1.w", (3, 3, cin, c1)), ("down1.b", (c1,)),
                  ("down2.w", (3, 3, c1, c2)), ("down2.b", (c2,)),
                  ("up1.w", (3, 3, 2 * c2, c1)), ("up1.b", (c1,)),
                  ("up2.w", (3, 3, 2 * c1, 1)), ("up2.b", (1,))]
    else:
        raise ParameterError(f"unknown architecture kind {arch['kind']!r}")
    return specs


@dataclass
class ModelParams:
    arch: dict
    tensors: list[np.ndarray]

    def __post_init__(self):
        specs = param_specs(self.arch)
        if len(specs) != len(self.tensors):
            raise ShapeError(f"expected {len(specs)} tensors, got {len(self.tensors)}")
        for (name, shape), t in zip(specs, self.tensors):
            if tuple(t.shape) != shape:
                raise ShapeError(f"{name}: expected {shape}, got {t.shape}")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in param_specs(self.arch)]

    @property
    def dtype(self):
        return self.tensors[0].dtype

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(dict(self.arch), [t.astype(dtype) for t in self.tensors])

    def copy(self) -> "ModelParams":
        return ModelParams(dict(self.arch), [t.copy() for t in self.tensors])

    def same_arch(self, other: "ModelParams") -> bool:
        return canonical_arch(self.arch) == canonical_arch(other.arch)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[self.names.index(name)]


def init_params(arch: dict, seed: int, dtype=np.float32) -> ModelParams:
    """Zero biases; weights ~ N(0, sqrt(2 / fan_in)) from the seed's init stream."""
    rng = stream(seed, "init")
    tensors = []
    for name, shape in param_specs(arch):
        if name.endswith(".b"):
            tensors.append(np.zeros(shape, dtype=dtype))
        else:
            fan_in = int(np.prod(shape[:-1]))
            tensors.append((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype))
    return ModelParams(dict(arch), tensors)


@dataclass
class Cache:
    params: ModelParams
    mode: str
    input_shape: tuple
    output_shape: tuple
    store: dict = field(default_factory=dict)


def _check_input(params: ModelParams, x: np.ndarray):
    arch = params.arch
    if x.ndim != 4 or x.shape[3] != arch["in_channels"]:
        raise ShapeError(f"input must be (batch, h, w, {arch['in_channels']}), got {x.shape}")
    div = 2 ** len(arch["channels"]) if arch["kind"] == "classifier" else 4
    if x.shape[1] % div or x.shape[2] % div:
        raise ShapeError(f"spatial dims must be divisible by {div}, got {x.shape[1:3]}")


def model_forward(params: ModelParams, x: np.ndarray, mode: str = "eval"):
    """Returns (output, cache). Classifier output is (batch, n_out) logits;
    segmenter output is a (batch, h, w, 1) probability map."""
    if mode not in ("train", "eval"):
        raise ParameterError("mode must be 'train' or 'eval'")
    x = np.asarray(x, dtype=params.dtype)
    _check_input(params, x)
    if params.arch["kind"] == "classifier":
        out, store = _classifier_forward(params, x)
    else:
        out, store = _segmenter_forward(params, x)
    cache = Cache(params, mode, x.shape, out.shape, store if mode == "train" else {})
    return out, cache


def model_backward(cache: Cache, output_grad: np.ndarray):
    """Returns (param_grads, input_grad) for a train-mode cache."""
    if cache.mode != "train" or not cache.store:
        raise StateError("backward needs a cache from a train-mode forward pass")
    g = np.asarray(output_grad, dtype=cache.params.dtype)
    if g.shape != cache.output_shape:
        raise StateError(f"output_grad shape {g.shape} does not match forward output {cache.output_shape}")
    if cache.params.arch["kind"] == "classifier":
        return _classifier_backward(cache, g)
    return _segmenter_backward(cache, g)


def _classifier_forward(params, x):
    t = params.tensors
    nblocks = len(params.arch["channels"])
    store = {"blocks": []}
    h = x
    for i in range(nblocks):
        z, cols = L.conv3x3_forward(h, t[2 * i], t[2 * i + 1])
        a = L.relu_forward(z)
        p, idx = L.maxpool2_forward(a)
        store["blocks"].append((h.shape, cols, z, idx))
        h = p
    store["last_act"] = a
    feat = L.gap_forward(h)
    store["pooled_shape"] = h.shape
    store["feat"] = feat
    logits = feat @ t[-2] + t[-1]
    return logits, store


def head_from_last_conv(params: ModelParams, act: np.ndarray) -> np.ndarray:
    """Logits computed from the last conv block's ReLU output."""
    p, _ = L.maxpool2_forward(np.asarray(act, dtype=params.dtype))
    return L.gap_forward(p) @ params.tensors[-2] + params.tensors[-1]


def last_conv_grad(cache: Cache, output_grad: np.ndarray) -> np.ndarray:
    """Gradient of sum(output_grad * logits) w.r.t. the last conv activation."""
    st = cache.store
    t = cache.params.tensors
    dfeat = output_grad @ t[-2].T
    dp = L.gap_backward(dfeat, st["pooled_shape"])
    _, _, z, idx = st["blocks"][-1]
    return L.maxpool2_backward(dp, idx, z.shape)


def _classifier_backward(cache, g):
    st = cache.store
    t = cache.params.tensors
    grads = [None] * len(t)
    grads[-2] = st["feat"].T @ g
    grads[-1] = g.sum(axis=0)
    dh = L.gap_backward(g @ t[-2].T, st["pooled_shape"])
    for i in range(len(st["blocks"]) - 1, -1, -1):
        in_shape, cols, z, idx = st["blocks"][i]
        da = L.maxpool2_backward(dh, idx, z.shape)
        dz = L.relu_backward(da, z)
        dh, dw, db = L.conv3x3_backward(dz, cols, t[2 * i], in_shape)
        grads[2 * i], grads[2 * i + 1] = dw, db
    return grads, dh


def _segmenter_forward(params, x):
    w1, b1, w2, b2, w3, b3, w4, b4 = params.tensors
    z1, c1 = L.conv3x3_forward(x, w1, b1)
    e1 = L.relu_forward(z1)
    p1, i1 = L.maxpool2_forward(e1)
    z2, c2 = L.conv3x3_forward(p1, w2, b2)
    e2 = L.relu_forward(z2)
    p2, i2 = L.maxpool2_forward(e2)
    u1in = np.concatenate([L.upsample2_forward(p2), e2], axis=-1)
    z3, c3 = L.conv3x3_forward(u1in, w3, b3)
    u1 = L.relu_forward(z3)
    u2in = np.concatenate([L.upsample2_forward(u1), e1], axis=-1)
    z4, c4 = L.conv3x3_forward(u2in, w4, b4)
    out = L.sigmoid(z4)
    store = dict(x_shape=x.shape, c1=c1, z1=z1, i1=i1, p1_shape=p1.shape, c2=c2, z2=z2, i2=i2,
                 u1in_shape=u1in.shape, c3=c3, z3=z3, u2in_shape=u2in.shape, c4=c4, out=out)
    return out, store


def _segmenter_backward(cache, g):
    s = cache.store
    w1, b1, w2, b2, w3, b3, w4, b4 = cache.params.tensors
    c1 = w1.shape[-1]
    c2 = w2.shape[-1]
    out = s["out"]
    dz4 = g * out * (1.0 - out)
    du2in, dw4, db4 = L.conv3x3_backward(dz4, s["c4"], w4, s["u2in_shape"])
    du1 = L.upsample2_backward(du2in[..., :c1])
    de1 = du2in[..., c1:]
    dz3 = L.relu_backward(du1, s["z3"])
    du1in, dw3, db3 = L.conv3x3_backward(dz3, s["c3"], w3, s["u1in_shape"])
    dp2 = L.upsample2_backward(du1in[..., :c2])
    de2 = du1in[..., c2:] + L.maxpool2_backward(dp2, s["i2"], s["z2"].shape)
    dz2 = L.relu_backward(de2, s["z2"])
    dp1, dw2, db2 = L.conv3x3_backward(dz2, s["c2"], w2, s["p1_shape"])
    de1 = de1 + L.maxpool2_backward(dp1, s["i1"], s["z1"].shape)
    dz1 = L.relu_backward(de1, s["z1"])
    dx, dw1, db1 = L.conv3x3_backward(dz1, s["c1"], w1, s["x_shape"])
    return [dw1, db1, dw2, db2, dw3, db3, dw4, db4], dx
