"""Versioned binary weight checkpoints.

Layout: magic 'RAGW', u32 version, u32 config-JSON length + bytes, u32 tensor
count, then per tensor: u16 name length + UTF-8 name, u8 ndim, u32 dims,
float32 little-endian data. Weights are stored f32 and loaded back as f64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RAGW"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_weights(path, config: dict, tensors: dict[str, np.ndarray]):
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    cfg_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    buf += struct.pack("<I", len(cfg_bytes))
    buf += cfg_bytes
    buf += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4")
        name_b = name.encode("utf-8")
        buf += struct.pack("<H", len(name_b))
        buf += name_b
        buf += struct.pack("<B", data.ndim)
        for d in data.shape:
            buf += struct.pack("<I", d)
        buf += data.tobytes()
    Path(path).write_bytes(bytes(buf))


def load_weights(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    config = json.loads(raw[off:off + cfg_len].decode("utf-8"))
    off += cfg_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        tensors[name] = data.astype(np.float64)
    return config, tensors


def assign_parameters(params: dict, tensors: dict[str, np.ndarray]):
    missing = set(params) - set(tensors)
    extra = set(tensors) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"parameter mismatch: missing={sorted(missing)[:4]} extra={sorted(extra)[:4]}"
        )
    for name, p in params.items():
        if p.data.shape != tensors[name].shape:
            raise CheckpointError(f"shape mismatch for {name}")
        p.data = tensors[name].copy()
