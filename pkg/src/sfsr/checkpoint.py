"""Binary checkpoint format, bit-exact on round-trip.

Layout (all integers little-endian):
  magic "SFSR" | format version uint32 | JSON blob length uint64 | JSON
  followed by records until EOF:
  name length uint64 | name UTF-8 | rank uint64 | extents uint64 each |
  values float32 raw.

The JSON blob carries the model config and optimizer scalars; the records
carry model parameters and, when present, optimizer moment tensors under
an ``adam.m/`` / ``adam.v/`` prefix.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, build

MAGIC = b"SFSR"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f4")
    name_bytes = name.encode("utf-8")
    fh.write(struct.pack("<Q", len(name_bytes)))
    fh.write(name_bytes)
    fh.write(struct.pack("<Q", data.ndim))
    for extent in data.shape:
        fh.write(struct.pack("<Q", extent))
    fh.write(data.tobytes())


def save_checkpoint(
    path,
    model: Model,
    optimizer_meta: dict | None = None,
    optimizer_tensors: dict[str, np.ndarray] | None = None,
) -> None:
    blob = json.dumps(
        {"model": model.config.to_dict(), "optimizer": optimizer_meta},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, tensor in model.named_parameters().items():
            _write_record(fh, name, tensor.data)
        if optimizer_tensors:
            for name, arr in optimizer_tensors.items():
                _write_record(fh, name, arr)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return data


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (json blob dict, name -> float32 array) from a checkpoint."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "format version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        (blob_len,) = struct.unpack("<Q", _read_exact(fh, 8, "config length"))
        blob = json.loads(_read_exact(fh, blob_len, "config blob").decode("utf-8"))
        records: dict[str, np.ndarray] = {}
        index = 0
        while True:
            head = fh.read(8)
            if not head:
                break
            if len(head) != 8:
                raise CheckpointError(f"checkpoint truncated in header of record #{index}")
            (name_len,) = struct.unpack("<Q", head)
            name = _read_exact(fh, name_len, f"name of record #{index}").decode("utf-8")
            (rank,) = struct.unpack("<Q", _read_exact(fh, 8, f"rank of record '{name}'"))
            if rank > 4:
                raise CheckpointError(f"record '{name}' has rank {rank} > 4")
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, f"extents of record '{name}'"))[0]
                for _ in range(rank)
            )
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 4 * count, f"values of record '{name}'")
            records[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            index += 1
    return blob, records


def load_model(path) -> tuple[Model, dict | None, dict[str, np.ndarray]]:
    """Rebuild a model (and optimizer tensors, if stored) from a checkpoint."""
    blob, records = read_checkpoint(path)
    config = ModelConfig.from_dict(blob["model"])
    model = build(config, seed=0)
    optimizer_tensors: dict[str, np.ndarray] = {}
    expected = model.named_parameters()
    seen = set()
    for name, arr in records.items():
        if name.startswith("adam.m/") or name.startswith("adam.v/"):
            optimizer_tensors[name] = arr
            continue
        if name not in expected:
            raise CheckpointError(f"record '{name}' does not match any model parameter")
        if expected[name].data.shape != arr.shape:
            raise CheckpointError(
                f"record '{name}' shape {arr.shape} != expected {expected[name].data.shape}"
            )
        expected[name].data = arr.copy()
        seen.add(name)
    missing = sorted(set(expected) - seen)
    if missing:
        raise CheckpointError(f"checkpoint missing parameter record '{missing[0]}'")
    return model, blob.get("optimizer"), optimizer_tensors
