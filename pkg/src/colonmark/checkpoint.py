"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"CLMK"                 magic
    u32                     format version
    u64                     header length in bytes
    header                  UTF-8 JSON: config, training state, tensor directory
    tensor data             float32 LE, concatenated in directory order

Each directory entry is ``{"name", "shape", "offset", "nbytes"}`` with
offsets relative to the first byte after the header. Parameters come
first in model order, then momentum buffers named ``momentum/<param>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import BadMagic, CheckpointError, Truncated, VersionMismatch
from .model import ViTConfig, ViTModel

MAGIC = b"CLMK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_MOMENTUM = "momentum/"


@dataclass
class Checkpoint:
    vit_config: ViTConfig
    params: dict[str, np.ndarray]
    momentum: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    train_config: Optional[dict] = None

    def to_model(self) -> ViTModel:
        model = ViTModel(self.vit_config)
        model.load_state(self.params)
        return model

    def same_as(self, other: "Checkpoint") -> bool:
        """Bitwise equality of every tensor plus equal metadata."""
        def same(a, b):
            return a.keys() == b.keys() and all(
                a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)
        return (self.vit_config == other.vit_config and self.epoch == other.epoch
                and self.rng_state == other.rng_state and self.train_config == other.train_config
                and same(self.params, other.params) and same(self.momentum, other.momentum))


def to_bytes(ckpt: Checkpoint) -> bytes:
    tensors = [(k, v) for k, v in ckpt.params.items()] + \
              [(_MOMENTUM + k, v) for k, v in ckpt.momentum.items()]
    directory, blobs, offset = [], [], 0
    for name, arr in tensors:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "vit_config": ckpt.vit_config.to_dict(),
        "state": {"epoch": ckpt.epoch, "rng": ckpt.rng_state},
        "train_config": ckpt.train_config,
        "tensors": directory,
    }
    hbytes = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {data[:4]!r}")
    if len(data) < _PREFIX.size:
        raise Truncated("file ends inside the fixed prefix")
    _, version, hlen = _PREFIX.unpack_from(data)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, this build reads {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise Truncated("file ends inside the header")
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
        cfg = ViTConfig.from_dict(header["vit_config"])
        directory = header["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"malformed header: {e}") from None
    params, momentum = {}, {}
    for entry in directory:
        lo = start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise Truncated(f"tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(data[lo:hi], dtype="<f4").astype(np.float32).reshape(entry["shape"])
        name = entry["name"]
        if name.startswith(_MOMENTUM):
            momentum[name[len(_MOMENTUM):]] = arr
        else:
            params[name] = arr
    state = header.get("state", {})
    return Checkpoint(cfg, params, momentum, int(state.get("epoch", 0)), state.get("rng", {}),
                      header.get("train_config"))


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
