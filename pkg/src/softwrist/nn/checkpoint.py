"""Binary checkpoint files.

Layout: ``b"SWCK"``, one version byte, a little-endian uint32 header length, the UTF-8
JSON header, then every tensor as little-endian float64 in header order. The header
lists the network kind, tensor names and shapes, architecture, normalization constants
and training metadata.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SWCK"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointIoError(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class Corrupt(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str
    tensors: dict[str, np.ndarray]
    arch: dict = field(default_factory=dict)
    normalization: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def to_bytes(ckpt: Checkpoint, version: int = FORMAT_VERSION) -> bytes:
    names = list(ckpt.tensors)
    header = {
        "kind": ckpt.kind,
        "tensors": [{"name": n, "shape": list(np.shape(ckpt.tensors[n]))} for n in names],
        "arch": ckpt.arch,
        "normalization": ckpt.normalization,
        "metadata": ckpt.metadata,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(ckpt.tensors[n], dtype="<f8").tobytes() for n in names)
    return MAGIC + bytes([version]) + struct.pack("<I", len(head)) + head + payload


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 9 or data[:4] != MAGIC:
        raise Corrupt("not a checkpoint file (bad magic)")
    if data[4] != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format version {data[4]}, expected {FORMAT_VERSION}")
    (n_head,) = struct.unpack("<I", data[5:9])
    if len(data) < 9 + n_head:
        raise Corrupt("truncated header")
    try:
        header = json.loads(data[9:9 + n_head].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise Corrupt(f"unreadable header: {exc}") from exc
    offset = 9 + n_head
    sizes = [int(np.prod(t["shape"], dtype=np.int64)) for t in header["tensors"]]
    if len(data) != offset + 8 * sum(sizes):
        raise Corrupt(f"payload is {len(data) - offset} bytes, header declares {8 * sum(sizes)}")
    tensors = {}
    for t, n in zip(header["tensors"], sizes):
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64)
        tensors[t["name"]] = arr.reshape(t["shape"])
        offset += 8 * n
    return Checkpoint(header["kind"], tensors, header.get("arch", {}), header.get("normalization", {}),
                      header.get("metadata", {}))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(to_bytes(ckpt))
        tmp.replace(path)
    except OSError as exc:
        raise CheckpointIoError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointIoError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(data)


class CheckpointMismatch(CheckpointError):
    """A checkpoint does not fit the configuration it is used with."""
