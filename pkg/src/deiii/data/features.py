"""DEF1 binary tensor files and the multi-tensor checkpoint container.

DEF1 layout, all little-endian::

    offset 0   4 bytes   magic b"DEF1"
    offset 4   u16       version (1)
    offset 6   u8        dtype code: 0 = float32, 1 = float64
    offset 7   u8        rank r
    offset 8   r x u32   shape
    then       payload   row-major values, itemsize * prod(shape) bytes

A checkpoint (DEC1) is a DEF1 sequence with names and a JSON config echo::

    4 bytes magic b"DEC1" | u16 version | u32 entry count
    u32 config length | config JSON (utf-8)
    per entry: u16 name length | name (utf-8) | one DEF1 record
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DEF1"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CHECKPOINT_MAGIC = b"DEC1"


class FeatureFileError(ValueError):
    """Malformed or non-finite tensor file."""


def header_size(rank: int) -> int:
    return 8 + 4 * rank


def encode_tensor(arr: np.ndarray, dtype_code: int | None = None) -> bytes:
    arr = np.asarray(arr)
    if dtype_code is None:
        dtype_code = 1 if arr.dtype == np.float64 else 0
    if dtype_code not in DTYPE_CODES:
        raise FeatureFileError(f"unsupported dtype code {dtype_code}")
    if arr.ndim > 255:
        raise FeatureFileError(f"rank {arr.ndim} exceeds 255")
    if any(n < 1 for n in arr.shape):
        raise FeatureFileError(f"shape {arr.shape} has a zero-length axis")
    data = np.ascontiguousarray(arr, dtype=DTYPE_CODES[dtype_code])
    if not np.isfinite(data).all():
        bad = int(np.flatnonzero(~np.isfinite(data.reshape(-1)))[0])
        raise FeatureFileError(f"refusing to write non-finite value at element {bad}")
    head = MAGIC + struct.pack("<HBB", VERSION, dtype_code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + data.tobytes(order="C")


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one DEF1 record at ``offset``; return the array and the end offset."""
    if len(buf) - offset < 8:
        raise FeatureFileError(f"truncated header at offset {offset}: {len(buf) - offset} bytes")
    magic = buf[offset:offset + 4]
    if magic != MAGIC:
        raise FeatureFileError(f"bad magic {magic!r} at offset {offset}, expected {MAGIC!r}")
    version, code, rank = struct.unpack_from("<HBB", buf, offset + 4)
    if version != VERSION:
        raise FeatureFileError(f"unsupported version {version} at offset {offset + 4}")
    if code not in DTYPE_CODES:
        raise FeatureFileError(f"unknown dtype code {code} at offset {offset + 6}")
    shape_at = offset + 8
    if len(buf) < shape_at + 4 * rank:
        raise FeatureFileError(f"truncated shape at offset {shape_at}")
    shape = struct.unpack_from(f"<{rank}I", buf, shape_at)
    if any(n == 0 for n in shape):
        raise FeatureFileError(f"zero-length axis in shape {shape} at offset {shape_at}")
    dtype = DTYPE_CODES[code]
    start = shape_at + 4 * rank
    nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    if len(buf) - start < nbytes:
        raise FeatureFileError(
            f"truncated payload at offset {start}: expected {nbytes} bytes, found {len(buf) - start}"
        )
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=start)
    arr = arr.reshape(shape).copy()
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr.reshape(-1)))[0])
        raise FeatureFileError(f"non-finite value at byte offset {start + bad * dtype.itemsize}")
    return arr, start + nbytes


def write_feature_file(path, arr: np.ndarray, dtype_code: int | None = None) -> None:
    Path(path).write_bytes(encode_tensor(arr, dtype_code))


def read_feature_file(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FeatureFileError(f"{len(buf) - end} trailing bytes after payload at offset {end}")
    return arr


def write_checkpoint(path, tensors: dict[str, np.ndarray], config: dict) -> None:
    out = io.BytesIO()
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    out.write(CHECKPOINT_MAGIC + struct.pack("<HI", VERSION, len(tensors)))
    out.write(struct.pack("<I", len(cfg)) + cfg)
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(encode_tensor(arr))
    Path(path).write_bytes(out.getvalue())


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FeatureFileError(f"bad checkpoint magic {buf[:4]!r} at offset 0")
    try:
        version, count = struct.unpack_from("<HI", buf, 4)
        (cfg_len,) = struct.unpack_from("<I", buf, 10)
    except struct.error:
        raise FeatureFileError("truncated checkpoint header") from None
    if version != VERSION:
        raise FeatureFileError(f"unsupported checkpoint version {version} at offset 4")
    pos = 14
    config = json.loads(buf[pos:pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (n,) = struct.unpack_from("<H", buf, pos)
        except struct.error:
            raise FeatureFileError(f"truncated entry name at offset {pos}") from None
        name = buf[pos + 2:pos + 2 + n].decode("utf-8")
        tensors[name], pos = decode_tensor(buf, pos + 2 + n)
    return tensors, config
