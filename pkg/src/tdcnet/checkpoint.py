"""Versioned binary model checkpoints with bit-exact round-tripping.

Layout: magic b"TDCK", uint32 version, uint32 header length, UTF-8 JSON
header (model config plus an ordered tensor index with shapes), then the raw
little-endian float64 tensor payloads in index order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .models import Model, ModelConfig

MAGIC = b"TDCK"
VERSION = 1


def save_checkpoint(path, model: Model):
    names, tensors = [], []
    for name, t in model.named_parameters():
        names.append({"name": name, "shape": list(t.values.shape)})
        tensors.append(t.values)
    header = json.dumps({"config": model.config.to_dict(), "tensors": names},
                        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        for v in tensors:
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> Model:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[12:12 + header_len].decode())
        config = ModelConfig.from_dict(header["config"])
    except Exception as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from None
    model = Model(config, seed=0)
    offset = 12 + header_len
    index = {entry["name"]: tuple(entry["shape"]) for entry in header["tensors"]}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        blob = raw[offset:offset + 8 * n]
        if len(blob) != 8 * n:
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        index[entry["name"]] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
        offset += 8 * n
    for name, t in model.named_parameters():
        if name not in index:
            raise CheckpointError(f"{path}: missing tensor {name}")
        if index[name].shape != t.values.shape:
            raise CheckpointError(f"{path}: tensor {name} has shape "
                                  f"{index[name].shape}, model expects {t.values.shape}")
        t.values = index[name]
    return model
