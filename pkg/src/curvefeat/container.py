"""Bit-exact binary tensor container ("CFT1").

Record layout, all integers little-endian regardless of host:

    magic   4 bytes  b"CFT1"
    rank    u32
    dims    u32 * rank
    dtype   u8   (0=f32, 1=f64, 2=c64 interleaved re/im f32, 3=c128)
    mlen    u32  metadata byte length
    meta    mlen bytes of UTF-8 "key=value" lines
    payload row-major array data

An archive is simply records written back to back; readers consume until
EOF. Files are written atomically (temp file + rename).
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

MAGIC = b"CFT1"

_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("float64"): 1,
    np.dtype("complex64"): 2,
    np.dtype("complex128"): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
# numpy dtype strings with explicit little-endian byte order
_CODE_LE = {0: "<f4", 1: "<f8", 2: "<c8", 3: "<c16"}


class ContainerError(ValueError):
    pass


def _encode_metadata(metadata: dict[str, str]) -> bytes:
    lines = []
    for key, value in metadata.items():
        key, value = str(key), str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise ContainerError(f"metadata key/value not encodable: {key!r}")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def _decode_metadata(blob: bytes) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        out[key] = value
    return out


def write_record(fh: BinaryIO, array: np.ndarray, metadata: dict[str, str] | None = None) -> None:
    arr = np.asarray(array)
    if arr.dtype not in _DTYPE_CODES:
        if np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        elif np.issubdtype(arr.dtype, np.complexfloating):
            arr = arr.astype(np.complex128)
        else:
            raise ContainerError(f"unsupported dtype {arr.dtype}")
    code = _DTYPE_CODES[arr.dtype]
    meta = _encode_metadata(metadata or {})
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
    fh.write(struct.pack("<B", code))
    fh.write(struct.pack("<I", len(meta)))
    fh.write(meta)
    fh.write(np.ascontiguousarray(arr).astype(_CODE_LE[code]).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise ContainerError("truncated record")
    return blob


def read_record(fh: BinaryIO) -> tuple[np.ndarray, dict[str, str]] | None:
    """Next record from the stream, or None at a clean EOF."""
    magic = fh.read(4)
    if not magic:
        return None
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank)) if rank else ()
    (code,) = struct.unpack("<B", _read_exact(fh, 1))
    if code not in _CODE_DTYPES:
        raise ContainerError(f"unknown dtype code {code}")
    (mlen,) = struct.unpack("<I", _read_exact(fh, 4))
    metadata = _decode_metadata(_read_exact(fh, mlen))
    count = int(np.prod(dims)) if dims else 1
    payload = _read_exact(fh, count * np.dtype(_CODE_LE[code]).itemsize)
    arr = np.frombuffer(payload, dtype=_CODE_LE[code], count=count).reshape(dims)
    return arr.astype(_CODE_DTYPES[code]), metadata


def write_archive(
    path: str | Path, records: Iterable[tuple[np.ndarray, dict[str, str]]]
) -> None:
    """Write records atomically: temp file in the target dir, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            for array, metadata in records:
                write_record(fh, array, metadata)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_archive(path: str | Path) -> list[tuple[np.ndarray, dict[str, str]]]:
    out = []
    with open(path, "rb") as fh:
        while True:
            rec = read_record(fh)
            if rec is None:
                return out
            out.append(rec)
