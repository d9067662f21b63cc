"""LSCKPT1 binary checkpoint: magic, version, a JSON metadata record, then
length-prefixed named float64 tensors (parameters followed by optimizer
velocities).  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .net import Network, NetworkSpec
from .optim import OptimState

CHECKPOINT_MAGIC = b"LSCKPT1"
CHECKPOINT_VERSION = 1
_VELOCITY_PREFIX = "velocity/"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    velocities: dict[str, np.ndarray]
    dtype: str
    history_summary: dict
    config_hash: str
    optim: dict

    def build_model(self, seed: int = 0) -> Network:
        model = Network(self.spec, seed=seed, dtype=np.dtype(self.dtype))
        model.load_state(self.params)
        return model


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f8")
    name_b = name.encode("utf-8")
    head = struct.pack("<I", len(name_b)) + name_b + struct.pack("<I", data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


def save_checkpoint(
    path: str | Path,
    model: Network,
    optim: OptimState | None = None,
    history_summary: dict | None = None,
    config_hash: str = "",
) -> None:
    meta = {
        "spec": model.spec.to_dict(),
        "dtype": str(model.dtype),
        "history_summary": history_summary or {},
        "config_hash": config_hash,
        "optim": {
            "lr": optim.lr if optim else None,
            "momentum": optim.momentum if optim else None,
            "weight_decay": optim.weight_decay if optim else None,
        },
    }
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    tensors = [(p.name, p.data) for p in model.params()]
    if optim is not None:
        tensors += [(_VELOCITY_PREFIX + name, v) for name, v in sorted(optim.velocities.items())]

    blob = CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(meta_b)) + meta_b
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        blob += _pack_tensor(name, arr)
    Path(path).write_bytes(blob)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise CheckpointError(
                f"{self.path}: truncated while reading {what}: needed {n} bytes at offset "
                f"{self.off}, file has {len(self.blob)}"
            )
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path: str | Path) -> Checkpoint:
    blob = Path(path).read_bytes()
    r = _Reader(blob, path)
    if r.take(len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an LSCKPT1 checkpoint")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    meta = json.loads(r.take(r.u32("metadata length"), "metadata").decode("utf-8"))
    n_tensors = r.u32("tensor count")
    params: dict[str, np.ndarray] = {}
    velocities: dict[str, np.ndarray] = {}
    for t in range(n_tensors):
        name = r.take(r.u32("tensor name length"), "tensor name").decode("utf-8")
        ndim = r.u32(f"rank of {name!r}")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"shape of {name!r}"))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * count, f"data of {name!r}"), dtype="<f8").reshape(shape).copy()
        if name.startswith(_VELOCITY_PREFIX):
            velocities[name[len(_VELOCITY_PREFIX) :]] = data
        else:
            params[name] = data
    if r.off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - r.off} trailing bytes after the last tensor")
    return Checkpoint(
        spec=NetworkSpec.from_dict(meta["spec"]),
        params=params,
        velocities=velocities,
        dtype=meta["dtype"],
        history_summary=meta["history_summary"],
        config_hash=meta["config_hash"],
        optim=meta["optim"],
    )
