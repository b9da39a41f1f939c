"""Versioned binary checkpoint format.

Layout (all integers little-endian u32):
  magic "CADC" | format version | metadata length | metadata JSON (utf-8)
  then per tensor: name length | name utf-8 | rows | cols | row-major
  float64 little-endian values.

1-D tensors are stored as a single row; true shapes live in the metadata.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .losses import LossConfig
from .model import ModelConfig, ModelParameters, PARAM_NAMES
from .trainer import TrainConfig

MAGIC = b"CADC"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Malformed checkpoint file; carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass
class Checkpoint:
    params: ModelParameters
    model: ModelConfig
    train: TrainConfig
    loss: LossConfig
    epoch: int
    rng_digest: str


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    tensors = ckpt.params.as_dict()
    meta = {
        "model": asdict(ckpt.model),
        "train": asdict(ckpt.train),
        "loss": asdict(ckpt.loss),
        "epoch": ckpt.epoch,
        "rng_digest": ckpt.rng_digest,
        "tensors": [
            {"name": name, "shape": list(tensors[name].shape)} for name in PARAM_NAMES
        ],
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        for name in PARAM_NAMES:
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            rows, cols = (1, arr.shape[0]) if arr.ndim == 1 else arr.shape
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<II", rows, cols))
            f.write(arr.astype("<f8").tobytes())


def _read_exact(f, n: int, offset: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}", offset)
    return data


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        offset = 0
        magic = _read_exact(f, 4, offset, "magic")
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
        offset += 4
        (version,) = struct.unpack("<I", _read_exact(f, 4, offset, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"incompatible checkpoint format version {version}, "
                f"this build reads version {FORMAT_VERSION}",
                offset,
            )
        offset += 4
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, offset, "metadata length"))
        offset += 4
        meta_bytes = _read_exact(f, meta_len, offset, "metadata")
        try:
            meta = json.loads(meta_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unparseable metadata: {exc}", offset) from exc
        offset += meta_len

        shapes = {entry["name"]: tuple(entry["shape"]) for entry in meta["tensors"]}
        tensors = {}
        for entry in meta["tensors"]:
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, offset, "tensor name length"))
            offset += 4
            name = _read_exact(f, name_len, offset, "tensor name").decode("utf-8")
            offset += name_len
            rows, cols = struct.unpack("<II", _read_exact(f, 8, offset, f"{name} shape"))
            offset += 8
            raw = _read_exact(f, rows * cols * 8, offset, f"{name} values")
            offset += rows * cols * 8
            arr = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
            expected = shapes.get(name)
            if expected is None:
                raise CheckpointError(f"tensor {name!r} missing from metadata", offset)
            if int(np.prod(expected)) != rows * cols:
                raise CheckpointError(
                    f"tensor {name!r} has {rows}x{cols} values, metadata says {expected}",
                    offset,
                )
            tensors[name] = arr.reshape(expected)
        trailing = f.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after last tensor", offset)

    params = ModelParameters.from_dict(tensors)
    model_cfg = ModelConfig(**meta["model"])
    params.validate(model_cfg)
    return Checkpoint(
        params=params,
        model=model_cfg,
        train=TrainConfig(**meta["train"]),
        loss=LossConfig(**meta["loss"]),
        epoch=int(meta["epoch"]),
        rng_digest=str(meta["rng_digest"]),
    )
