"""Binary netpbm (P5/P6) and raw TNSR tensor I/O, plus gamma preprocessing.

TNSR layout (little-endian)::

    b"TNSR" | uint32 height | uint32 width | uint32 channels | float32[C*H*W] planar
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import (
    CorruptHeader,
    NonPositiveGamma,
    TruncatedPayload,
    UnsupportedFormat,
    ValueOutOfRange,
)
from .tensor import Tensor

PathLike = Union[str, os.PathLike]

TNSR_MAGIC = b"TNSR"
_TNSR_HEADER = struct.Struct("<4sIII")
_WHITESPACE = b" \t\r\n\v\f"


def atomic_write(path: PathLike, payload: bytes) -> None:
    """Write ``payload`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- netpbm ------------------------------------------------------------------


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens = []
    pos = 2
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos] in _WHITESPACE:
            pos += 1
        if pos < n and buf[pos] == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < n and buf[pos] not in _WHITESPACE and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise CorruptHeader("netpbm header ended early")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or buf[pos] not in _WHITESPACE:
        raise CorruptHeader("missing whitespace after netpbm header")
    return tokens, pos + 1


def decode_netpbm(buf: bytes) -> Tensor:
    if len(buf) < 2:
        raise CorruptHeader("file too short for a netpbm header")
    magic = buf[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise UnsupportedFormat(f"unsupported netpbm magic {magic!r}")
    tokens, offset = _header_tokens(buf, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise CorruptHeader(f"non-integer netpbm header field: {exc}") from None
    if width < 1 or height < 1:
        raise CorruptHeader(f"invalid netpbm size {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormat(f"only maxval 255 is supported, got {maxval}")
    size = width * height * channels
    if len(buf) - offset < size:
        raise TruncatedPayload(f"expected {size} raster bytes, found {len(buf) - offset}")
    raster = np.frombuffer(buf, dtype=np.uint8, count=size, offset=offset)
    hwc = raster.reshape(height, width, channels).astype(np.float32) / np.float32(255.0)
    return Tensor.from_hwc(hwc)


def encode_netpbm(t: Tensor) -> bytes:
    if t.channels not in (1, 3):
        raise ValueOutOfRange(f"netpbm images need 1 or 3 channels, got {t.channels}")
    data = t.data
    if data.min() < 0.0 or data.max() > 1.0:
        raise ValueOutOfRange("image values must lie in [0, 1]")
    # round half up
    q = np.floor(data.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    magic = b"P5" if t.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, t.width, t.height)
    return header + np.moveaxis(q, 0, -1).tobytes()


def read_image(path: PathLike) -> Tensor:
    """Read a binary PGM (1 channel) or PPM (3 channels) scaled to [0, 1]."""
    return decode_netpbm(Path(path).read_bytes())


def write_image(path: PathLike, t: Tensor) -> None:
    atomic_write(path, encode_netpbm(t))


# -- TNSR --------------------------------------------------------------------


def encode_tensor(t: Tensor) -> bytes:
    header = _TNSR_HEADER.pack(TNSR_MAGIC, t.height, t.width, t.channels)
    return header + t.data.astype("<f4").tobytes()


def read_tensor_record(fh: BinaryIO) -> Tensor:
    """Read one TNSR record from an open stream, leaving it positioned after the payload."""
    header = fh.read(_TNSR_HEADER.size)
    if len(header) < _TNSR_HEADER.size:
        raise CorruptHeader("TNSR header truncated")
    magic, h, w, c = _TNSR_HEADER.unpack(header)
    if magic != TNSR_MAGIC:
        raise CorruptHeader(f"bad TNSR magic {magic!r}")
    if min(h, w, c) < 1:
        raise CorruptHeader(f"invalid TNSR dimensions {h}x{w}x{c}")
    nbytes = 4 * h * w * c
    payload = fh.read(nbytes)
    if len(payload) < nbytes:
        raise TruncatedPayload(f"expected {nbytes} payload bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(c, h, w)
    return Tensor(arr)


def decode_tensor(buf: bytes) -> Tensor:
    """Decode a standalone TNSR file; the payload must end exactly at end of file."""
    fh = io.BytesIO(buf)
    t = read_tensor_record(fh)
    if fh.tell() != len(buf):
        raise CorruptHeader(f"{len(buf) - fh.tell()} bytes after the declared payload")
    return t


def read_tensor(path: PathLike) -> Tensor:
    return decode_tensor(Path(path).read_bytes())


def write_tensor(path: PathLike, t: Tensor) -> None:
    atomic_write(path, encode_tensor(t))


def read_any(path: PathLike) -> Tensor:
    """Dispatch on the file's magic bytes: TNSR, P5 or P6."""
    buf = Path(path).read_bytes()
    if buf[:4] == TNSR_MAGIC:
        return decode_tensor(buf)
    return decode_netpbm(buf)


def gamma_correct(t: Tensor, gamma: float) -> Tensor:
    """Power-law correction ``t ** (1 / gamma)``; values must lie in [0, 1]."""
    if not gamma > 0:
        raise NonPositiveGamma(f"gamma must be positive, got {gamma}")
    data = t.data
    if data.min() < 0.0 or data.max() > 1.0:
        raise ValueOutOfRange("gamma correction expects values in [0, 1]")
    return Tensor._wrap(np.power(data.astype(np.float64), 1.0 / gamma).astype(t.dtype))
