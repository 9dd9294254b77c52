"""Checkpoint file: ``ROTSR1`` magic, JSON config block, named float32 tensors.

Layout (little-endian)::

    b"ROTSR1"
    u32 config_len, config_len bytes of UTF-8 JSON
    u32 n_tensors
    per tensor: u32 name_len, name, u32 ndim, ndim * u32 dims, prod(dims) * f32
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, SRNet

MAGIC = b"ROTSR1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: SRNet, extra: dict | None = None) -> None:
    cfg = {"model": model.cfg.to_dict(), **(extra or {})}
    blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    params = list(model.state_dict().items())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(params)))
        for name, t in params:
            nb = name.encode("utf-8")
            arr = t.detach().cpu().numpy().astype("<f4")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    (n,) = take("<I")
    config = json.loads(data[pos:pos + n].decode("utf-8"))
    pos += n
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (nl,) = take("<I")
        name = data[pos:pos + nl].decode("utf-8")
        pos += nl
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) * 4
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(data[pos:pos + size], dtype="<f4").reshape(shape).copy()
        pos += size
    return config, tensors


def load_checkpoint(path) -> tuple[SRNet, dict]:
    config, tensors = read_checkpoint(path)
    model = SRNet(ModelConfig(**config["model"]))
    state = model.state_dict()
    if set(state) != set(tensors):
        raise CheckpointError(f"{path}: parameter names do not match the configured model")
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return model, config
