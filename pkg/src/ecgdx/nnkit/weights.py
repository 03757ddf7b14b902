"""ECGW weight files.

Layout (all integers little-endian):
    b"ECGW" | u32 format version | u32 descriptor length |
    descriptor (canonical JSON, UTF-8) | tensors as float32, in descriptor order

The descriptor holds the architecture, the ordered tensor names and shapes,
and optional metadata (e.g. the training config hash).
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import FormatError, ShapeError
from .models import ModelParams, param_specs

MAGIC = b"ECGW"
VERSION = 1


def encode_weights(params: ModelParams, meta: dict | None = None) -> bytes:
    desc = {
        "arch": params.arch,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in zip(params.names, params.tensors)],
    }
    if meta:
        desc["meta"] = meta
    text = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(t, dtype="<f4").tobytes() for t in params.tensors)
    return MAGIC + struct.pack("<II", VERSION, len(text)) + text + body


def decode_weights(buf: bytes) -> tuple[ModelParams, dict]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise FormatError("not an ECGW weight file")
    version, n = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise FormatError(f"unsupported weight format version {version}")
    if len(buf) < 12 + n:
        raise FormatError("truncated descriptor")
    try:
        desc = json.loads(buf[12:12 + n].decode("utf-8"))
        arch = desc["arch"]
        listed = [(t["name"], tuple(t["shape"])) for t in desc["tensors"]]
        expected = [(name, tuple(shape)) for name, shape in param_specs(arch)]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad descriptor: {exc}") from exc
    if listed != expected:
        raise FormatError("descriptor tensor list is inconsistent with the architecture")
    pos = 12 + n
    tensors = []
    for _, shape in expected:
        count = int(np.prod(shape))
        chunk = buf[pos:pos + 4 * count]
        if len(chunk) != 4 * count:
            raise FormatError("truncated tensor data")
        tensors.append(np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(shape))
        pos += 4 * count
    if pos != len(buf):
        raise FormatError("trailing bytes after tensor data")
    try:
        params = ModelParams(arch, tensors)
    except ShapeError as exc:
        raise FormatError(str(exc)) from exc
    return params, desc.get("meta", {})


def save_weights(params: ModelParams, path: str | os.PathLike, meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_weights(params, meta))


def load_weights(path: str | os.PathLike) -> ModelParams:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())[0]


def load_weights_meta(path: str | os.PathLike) -> tuple[ModelParams, dict]:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())
