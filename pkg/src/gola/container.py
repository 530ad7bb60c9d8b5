"""GOLA1 tensor container.

Layout (all integers little-endian)::

    b"GOLA" | u32 version (=1) | u64 header_len | header (UTF-8 JSON) | payload

The header lists ``{"name", "shape": [rows, cols], "dtype": "f32", "offset",
"length_bytes"}`` per tensor, offsets relative to the payload start, plus a
free-form ``metadata`` object.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from gola.adapter import AdapterPair

MAGIC = b"GOLA"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class ContainerError(OSError):
    pass


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class OverlapError(ContainerError):
    pass


class LayoutError(ContainerError):
    pass


def atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_container(tensors: dict, metadata: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value), dtype="<f4")
        if arr.ndim != 2:
            raise ValueError(f"tensor {name!r} must be 2-D, got shape {arr.shape}")
        raw = arr.tobytes(order="C")
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "f32", "offset": offset, "length_bytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"tensors": entries, "metadata": metadata or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)


def decode_container(data: bytes, source: str = "<bytes>"):
    """Return ``(tensors, metadata)``; tensors keep the file order."""
    head = bytes(data[:4])
    if head != MAGIC[: len(head)] or (len(head) == 4 and head != MAGIC):
        raise BadMagicError(f"{source}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _PREFIX.size:
        raise TruncatedError(f"{source}: truncated before end of fixed header ({len(data)} bytes)")
    _, version, header_len = _PREFIX.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"{source}: unsupported container version {version}, expected {VERSION}")
    start = _PREFIX.size + header_len
    if start > len(data):
        raise TruncatedError(f"{source}: header claims {header_len} bytes but file ends early")
    try:
        header = json.loads(data[_PREFIX.size : start].decode("utf-8"))
        entries = header["tensors"]
        metadata = header.get("metadata", {})
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise LayoutError(f"{source}: malformed header ({exc})") from None
    payload = memoryview(data)[start:]
    spans, tensors = [], {}
    for e in entries:
        name = e.get("name")
        shape = e.get("shape")
        if e.get("dtype") != "f32":
            raise LayoutError(f"{source}: tensor {name!r} has unsupported dtype {e.get('dtype')!r}")
        if not (isinstance(shape, list) and len(shape) == 2 and all(isinstance(s, int) and s >= 0 for s in shape)):
            raise LayoutError(f"{source}: tensor {name!r} has invalid shape {shape!r}")
        off, length = e.get("offset"), e.get("length_bytes")
        if not (isinstance(off, int) and isinstance(length, int) and off >= 0 and length >= 0):
            raise LayoutError(f"{source}: tensor {name!r} has invalid offset/length")
        if shape[0] * shape[1] * 4 != length:
            raise LayoutError(f"{source}: tensor {name!r} length {length} does not match shape {shape}")
        if off + length > len(payload):
            raise TruncatedError(
                f"{source}: tensor {name!r} needs payload bytes [{off}, {off + length}) but payload has {len(payload)}"
            )
        if name in tensors:
            raise LayoutError(f"{source}: duplicate tensor name {name!r}")
        spans.append((off, off + length, name))
        tensors[name] = np.frombuffer(payload[off : off + length], dtype="<f4").reshape(shape).copy()
    spans.sort()
    for (_, end, a), (start2, _, b) in zip(spans, spans[1:]):
        if start2 < end:
            raise OverlapError(f"{source}: tensors {a!r} and {b!r} overlap in the payload")
    return tensors, metadata


def write_container(path, tensors: dict, metadata: dict | None = None):
    atomic_write(path, encode_container(tensors, metadata))


def read_container(path):
    return decode_container(Path(path).read_bytes(), str(path))


def adapter_to_tensors(adapter: AdapterPair) -> dict:
    return {"W": adapter.W, "A": adapter.A, "B": adapter.B}


def adapter_metadata(adapter: AdapterPair, layer_name: str = "layer", **extra) -> dict:
    return {"r": adapter.r, "scale": adapter.scale, "layer_name": layer_name, **extra}


def adapter_from_container(tensors: dict, metadata: dict) -> AdapterPair:
    missing = [t for t in ("W", "A", "B") if t not in tensors]
    if missing:
        raise ValueError(f"container lacks adapter tensors {missing}")
    adapter = AdapterPair(
        tensors["W"].astype(np.float64),
        tensors["A"].astype(np.float64),
        tensors["B"].astype(np.float64),
        float(metadata.get("scale", 1.0)),
    )
    if "r" in metadata and int(metadata["r"]) != adapter.r:
        raise ValueError(f"metadata says r={metadata['r']} but tensors have rank {adapter.r}")
    return adapter
