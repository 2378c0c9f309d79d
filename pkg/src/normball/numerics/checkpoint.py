"""Binary parameter container.

Layout (little-endian)::

    b"NBCK"            magic
    u8                 format version (1)
    u32                tensor count
    per tensor:
      u16 + bytes      UTF-8 name
      u8               ndim
      u32 * ndim       shape
      f64 * prod(shape) values, row-major

A plain-text manifest (``<file>.manifest``) lists ``name<TAB>shape`` lines,
and an optional ``<file>.meta`` sidecar holds ``key=value`` metadata.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"NBCK"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_params(params: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def decode_params(payload: bytes) -> dict[str, np.ndarray]:
    if payload[:4] != MAGIC:
        raise CheckpointFormatError("bad magic header")
    if len(payload) < 9:
        raise CheckpointFormatError("truncated header")
    (version,) = struct.unpack_from("<B", payload, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    (count,) = struct.unpack_from("<I", payload, 5)
    pos = 9
    params = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", payload, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", payload, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(payload):
                raise CheckpointFormatError(f"truncated data for {name!r}")
            params[name] = np.frombuffer(payload, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointFormatError(f"truncated checkpoint: {exc}") from exc
    if pos != len(payload):
        raise CheckpointFormatError("trailing bytes after last tensor")
    return params


def manifest_text(params: dict[str, np.ndarray]) -> str:
    lines = [f"{name}\t{'x'.join(str(d) for d in arr.shape) or 'scalar'}" for name, arr in params.items()]
    return "\n".join(lines) + "\n"


def format_meta(meta: dict) -> str:
    return "".join(f"{k}={meta[k]}\n" for k in sorted(meta))


def parse_meta(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointFormatError(f"bad metadata line {line!r}")
        out[key.strip()] = value.strip()
    return out


def save_params(path: str | os.PathLike, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    atomic_write_bytes(path, encode_params(params))
    atomic_write_text(path.with_name(path.name + ".manifest"), manifest_text(params))
    if meta is not None:
        atomic_write_text(path.with_name(path.name + ".meta"), format_meta(meta))


def load_params(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    params = decode_params(path.read_bytes())
    meta_path = path.with_name(path.name + ".meta")
    meta = parse_meta(meta_path.read_text("utf-8")) if meta_path.exists() else {}
    return params, meta
