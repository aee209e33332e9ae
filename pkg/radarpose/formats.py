"""
On-disk formats.

All binaries are little-endian:

* MMRC radar cube: "MMRC", u32 version, u32 A, C, N, u32 view tag,
  u64 frame_index, then A*C*N (re, im) f32 pairs in [a][c][n] order.
* MMH3 heatmap: "MMH3", u32 version, u32 H, D, W, then H*D*W (re, im) f32
  pairs in [h][d][w] order.
* MMCK checkpoint: "MMCK", u32 version, u32 count, then per entry u32 name
  length, UTF-8 name, u8 dtype tag, u32 rank, rank x u32 dims, raw data.

Poses, metrics and train records are JSON.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Mapping, Tuple, Union

import numpy as np

from .config import VIEW_NAMES
from .errors import FormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FORMAT_VERSION = 1
_CUBE_HEADER = struct.Struct("<4sIIIIIQ")
_HEATMAP_HEADER = struct.Struct("<4sIIII")
_CKPT_HEADER = struct.Struct("<4sII")
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _interleave(values: np.ndarray) -> bytes:
    pairs = np.empty(values.shape + (2,), dtype="<f4")
    pairs[..., 0] = values.real
    pairs[..., 1] = values.imag
    return pairs.tobytes()


def _deinterleave(body: bytes, shape: Tuple[int, ...]) -> np.ndarray:
    pairs = np.frombuffer(body, dtype="<f4").reshape(shape + (2,))
    return pairs[..., 0].astype(np.float64) + 1j * pairs[..., 1].astype(np.float64)


def _check_magic(magic: bytes, expected: bytes, version: int) -> None:
    if magic != expected:
        raise FormatError(f"bad magic {magic!r}, expected {expected!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported {expected.decode()} version {version}")


def encode_cube(samples: np.ndarray, frame_index: int, view: str) -> bytes:
    a, c, n = samples.shape
    header = _CUBE_HEADER.pack(b"MMRC", FORMAT_VERSION, a, c, n, VIEW_NAMES.index(view), frame_index)
    return header + _interleave(samples)


def decode_cube(data: bytes) -> Tuple[np.ndarray, int, str]:
    """Returns (samples, frame_index, view)."""
    if len(data) < _CUBE_HEADER.size:
        raise FormatError("truncated MMRC header")
    magic, version, a, c, n, view_tag, frame_index = _CUBE_HEADER.unpack_from(data)
    _check_magic(magic, b"MMRC", version)
    if view_tag >= len(VIEW_NAMES):
        raise FormatError(f"unknown view tag {view_tag}")
    expected = _CUBE_HEADER.size + a * c * n * 8
    if len(data) != expected:
        raise FormatError(f"MMRC body has {len(data)} bytes, header implies {expected}")
    return _deinterleave(data[_CUBE_HEADER.size :], (a, c, n)), frame_index, VIEW_NAMES[view_tag]


def encode_heatmap(values: np.ndarray) -> bytes:
    h, d, w = values.shape
    return _HEATMAP_HEADER.pack(b"MMH3", FORMAT_VERSION, h, d, w) + _interleave(values)


def decode_heatmap(data: bytes) -> np.ndarray:
    if len(data) < _HEATMAP_HEADER.size:
        raise FormatError("truncated MMH3 header")
    magic, version, h, d, w = _HEATMAP_HEADER.unpack_from(data)
    _check_magic(magic, b"MMH3", version)
    expected = _HEATMAP_HEADER.size + h * d * w * 8
    if len(data) != expected:
        raise FormatError(f"MMH3 body has {len(data)} bytes, header implies {expected}")
    return _deinterleave(data[_HEATMAP_HEADER.size :], (h, d, w))


def write_stream(path: PathLike, records: List[bytes]) -> None:
    """Concatenate length-prefixed records (u64 length each) into one file."""
    with open(path, "wb") as fh:
        for record in records:
            fh.write(struct.pack("<Q", len(record)))
            fh.write(record)


def read_stream(path: PathLike) -> List[bytes]:
    records = []
    with open(path, "rb") as fh:
        while True:
            prefix = fh.read(8)
            if not prefix:
                break
            if len(prefix) != 8:
                raise FormatError(f"{path}: truncated record length")
            (length,) = struct.unpack("<Q", prefix)
            body = fh.read(length)
            if len(body) != length:
                raise FormatError(f"{path}: truncated record")
            records.append(body)
    return records


def _read_exact(fh: BinaryIO, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise FormatError("truncated MMCK checkpoint")
    return data


def save_checkpoint(path: PathLike, params: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(b"MMCK", FORMAT_VERSION, len(params)))
        for name, value in params.items():
            value = np.asarray(value)
            tag = 0 if value.dtype == np.float32 else 1
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BI", tag, value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(np.ascontiguousarray(value, dtype=_DTYPE_TAGS[tag]).tobytes())
    logger.info(f"Saved checkpoint with {len(params)} parameters to {path}")


def load_checkpoint(path: PathLike) -> Dict[str, np.ndarray]:
    params: Dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic, version, count = _CKPT_HEADER.unpack(_read_exact(fh, _CKPT_HEADER.size))
        _check_magic(magic, b"MMCK", version)
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            tag, rank = struct.unpack("<BI", _read_exact(fh, 5))
            if tag not in _DTYPE_TAGS:
                raise FormatError(f"{name}: unknown dtype tag {tag}")
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            dtype = _DTYPE_TAGS[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            params[name] = np.frombuffer(_read_exact(fh, nbytes), dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} entries")
    return params


def write_json(path: PathLike, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: PathLike) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from e
