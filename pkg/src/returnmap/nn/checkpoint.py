"""Checkpoint serialization for the regression network.

Layout (little-endian): magic "RMCK" | u32 version | u32 json length |
JSON header | raw f64 arrays in declaration order (parameters, batch-norm
running statistics, Adam first and second moments) | u64 step counter.

The JSON header stores the network configuration plus whatever metadata the
trainer wants to carry (raster window, loss scales, system name).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .adam import Adam
from .network import ConvRegressor, NetConfig

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError"]

MAGIC = b"RMCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _arrays(net: ConvRegressor, opt: Adam):
    return list(net.params()) + list(net.buffers()) + list(opt.m) + list(opt.v)


def save_checkpoint(net: ConvRegressor, opt: Adam, path, meta: dict | None = None) -> None:
    header = {
        "net": net.cfg.to_dict(),
        "lr": opt.lr,
        "weight_decay": opt.weight_decay,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    for arr in _arrays(net, opt):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(struct.pack("<Q", opt.t))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Rebuild ``(net, opt, meta)`` from a checkpoint file."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, jlen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(blob[12 : 12 + jlen].decode())
    net = ConvRegressor(NetConfig.from_dict(header["net"]))
    opt = Adam(net, lr=header["lr"], weight_decay=header["weight_decay"])
    off = 12 + jlen
    for arr in _arrays(net, opt):
        count = arr.size
        vals = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        if vals.size != count:
            raise CheckpointError(f"{path}: truncated arrays")
        arr[...] = vals.reshape(arr.shape)
        off += 8 * count
    if off + 8 != len(blob):
        raise CheckpointError(f"{path}: wrong payload size")
    (opt.t,) = struct.unpack_from("<Q", blob, off)
    return net, opt, header["meta"]
