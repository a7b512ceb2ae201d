"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"RA3C" | u32 format version
    repeated: u16 name length | name (utf-8) | u8 rank | u32 dims[rank] | f32 data
    u32 CRC32 of every preceding byte

Metadata travels as empty rank-1 segments whose name starts with ``meta/``
and carries ``key=value`` text, so readers that only know the segment layout
still parse the file.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .params import ParamSet

MAGIC = b"RA3C"
FORMAT_VERSION = 1
META_PREFIX = "meta/"


class CheckpointError(ValueError):
    pass


def _segment(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"segment name too long: {len(raw)} bytes")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def encode_checkpoint(params: ParamSet, meta: dict[str, str] | None = None) -> bytes:
    body = bytearray(MAGIC + struct.pack("<I", FORMAT_VERSION))
    entries = {"version": str(params.version), **(meta or {})}
    for key, value in entries.items():
        body += _segment(f"{META_PREFIX}{key}={value}", np.zeros(0, dtype=np.float32))
    for name, arr in params.segments.items():
        if name.startswith(META_PREFIX):
            raise CheckpointError(f"parameter name may not start with {META_PREFIX!r}")
        body += _segment(name, arr)
    return bytes(body) + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(blob: bytes) -> tuple[ParamSet, dict[str, str]]:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("not an RA3C checkpoint")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    (fmt,) = struct.unpack_from("<I", body, 4)
    if fmt != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {fmt}")
    pos = 8
    segments: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    try:
        while pos < len(body):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", body, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            if pos + 4 * count > len(body):
                raise CheckpointError(f"segment {name!r} truncated")
            data = np.frombuffer(body, dtype="<f4", count=count, offset=pos).astype(np.float32).reshape(dims)
            pos += 4 * count
            if name.startswith(META_PREFIX):
                key, _, value = name[len(META_PREFIX):].partition("=")
                meta[key] = value
            else:
                segments[name] = data
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    version = int(meta.pop("version", "0"))
    return ParamSet(segments, version), meta


def save_checkpoint(path: str | Path, params: ParamSet, meta: dict[str, str] | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, meta))


def load_checkpoint(path: str | Path) -> tuple[ParamSet, dict[str, str]]:
    return decode_checkpoint(Path(path).read_bytes())
