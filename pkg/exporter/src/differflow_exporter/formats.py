"""Standalone writers/readers for the DFN1 tensor and DFF1 feature formats.

This is an independent implementation of the byte layout the core consumes;
agreement is enforced by the cross round-trip tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

TENSOR_MAGIC = b"DFN1"
FEATURE_MAGIC = b"DFF1"
VERSION = 1


@dataclass
class TensorArchive:
    metadata: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def _string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_tensor_file(path, archive: TensorArchive) -> None:
    out = [TENSOR_MAGIC, struct.pack("<I", VERSION)]
    meta = "".join(f"{k}={v}\n" for k, v in archive.metadata.items()).encode("utf-8")
    out += [struct.pack("<I", len(meta)), meta, struct.pack("<I", len(archive.tensors))]
    for name, tensor in archive.tensors.items():
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        out.append(_string(name))
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def read_tensor_file(path) -> TensorArchive:
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise ValueError(f"{path}: truncated")
        chunk = data[off:off + n]
        off += n
        return chunk

    if take(4) != TENSOR_MAGIC:
        raise ValueError(f"{path}: bad magic")
    if struct.unpack("<I", take(4))[0] != VERSION:
        raise ValueError(f"{path}: unsupported version")
    meta_raw = take(struct.unpack("<I", take(4))[0]).decode("utf-8")
    metadata = {}
    for line in meta_raw.splitlines():
        if line:
            key, _, value = line.partition("=")
            metadata[key] = value
    count = struct.unpack("<I", take(4))[0]
    tensors = {}
    for _ in range(count):
        name = take(struct.unpack("<I", take(4))[0]).decode("utf-8")
        rank = struct.unpack("<I", take(4))[0]
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).copy()
    return TensorArchive(metadata, tensors)


def write_feature_file(path, dim: int, records) -> None:
    """records: iterable of (sample_id, label, transform_id, values)."""
    records = list(records)
    out = [FEATURE_MAGIC, struct.pack("<II", VERSION, dim), struct.pack("<Q", len(records))]
    seen = set()
    for sample_id, label, transform_id, values in records:
        arr = np.ascontiguousarray(values, dtype="<f4")
        if arr.shape != (dim,):
            raise ValueError(f"record {sample_id!r} has shape {arr.shape}, expected ({dim},)")
        key = (sample_id, transform_id)
        if key in seen:
            raise ValueError(f"duplicate record key {key}")
        seen.add(key)
        out.append(_string(sample_id))
        out.append(struct.pack("<bI", label, transform_id))
        out.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))
