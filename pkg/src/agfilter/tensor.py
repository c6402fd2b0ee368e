"""Dense planar image container, elementwise arithmetic and bilinear resampling.

A :class:`Tensor` wraps a read-only ``(C, H, W)`` numpy array. Tensors are
float32 unless ``dtype=np.float64`` is requested; every operator accepts both
so verification code can run the same path in double precision.
"""

from __future__ import annotations

from numbers import Real
from typing import Callable, Union

import numpy as np

from .errors import DivisionNearZero, InvalidDimension, NonFiniteValue, ShapeMismatch

DIV_EPS = 1e-12

_FLOAT_TYPES = (np.float32, np.float64)


def _as_planar(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InvalidDimension(f"expected a (C, H, W) or (H, W) array, got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise InvalidDimension(f"empty tensor shape {arr.shape}")
    return arr


class Tensor:
    """Immutable H x W x C feature map stored channel-major.

    >>> t = Tensor(np.ones((2, 3)))
    >>> (t.channels, t.height, t.width)
    (1, 2, 3)
    """

    __slots__ = ("_data",)

    def __init__(self, data, dtype=np.float32):
        if np.dtype(dtype).type not in _FLOAT_TYPES:
            raise TypeError(f"tensor dtype must be float32 or float64, got {dtype}")
        arr = np.array(_as_planar(data), dtype=dtype, copy=True, order="C")
        if not np.isfinite(arr).all():
            raise NonFiniteValue("tensor values must be finite")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path for freshly computed arrays; still enforces finiteness.
        if not np.isfinite(arr).all():
            raise NonFiniteValue("operation produced non-finite values")
        t = cls.__new__(cls)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        t._data = arr
        return t

    @classmethod
    def full(cls, height: int, width: int, value: float, channels: int = 1, dtype=np.float32) -> "Tensor":
        if min(height, width, channels) < 1:
            raise InvalidDimension("dimensions must be >= 1")
        return cls._wrap(np.full((channels, height, width), value, dtype=dtype))

    @classmethod
    def from_hwc(cls, arr, dtype=np.float32) -> "Tensor":
        """Build from an interleaved ``(H, W, C)`` array."""
        arr = np.asarray(arr)
        if arr.ndim != 3:
            raise InvalidDimension("from_hwc expects a 3-D array")
        return cls(np.moveaxis(arr, -1, 0), dtype=dtype)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dtype(self):
        return self._data.dtype

    @property
    def channels(self) -> int:
        return self._data.shape[0]

    @property
    def height(self) -> int:
        return self._data.shape[1]

    @property
    def width(self) -> int:
        return self._data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        """``(C, H, W)``."""
        return self._data.shape

    def to_hwc(self) -> np.ndarray:
        return np.moveaxis(self._data, 0, -1).copy()

    def astype(self, dtype) -> "Tensor":
        return Tensor._wrap(self._data.astype(dtype))

    def channel(self, c: int) -> "Tensor":
        return Tensor._wrap(self._data[c : c + 1].copy())

    def __len__(self) -> int:
        return self._data.size

    def __repr__(self) -> str:
        return f"Tensor(C={self.channels}, H={self.height}, W={self.width}, dtype={self.dtype})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and self.dtype == other.dtype and np.array_equal(self._data, other._data)

    __hash__ = None

    def __add__(self, other):
        return elementwise("add", self, other)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    __radd__ = __add__
    __rmul__ = __mul__


Operand = Union[Tensor, Real]


def broadcast_shape(a: tuple[int, int, int], b: tuple[int, int, int]) -> tuple[int, int, int]:
    """Shape of an elementwise result; only the channel axis may broadcast."""
    if a == b:
        return a
    if a[1:] != b[1:] or (a[0] != 1 and b[0] != 1):
        raise ShapeMismatch(f"incompatible shapes {a} and {b}")
    return (max(a[0], b[0]),) + a[1:]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_BINARY: dict[str, Callable] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "scale": np.multiply,
    "pow": np.power,
}
_UNARY: dict[str, Callable] = {
    "relu": lambda x: np.maximum(x, 0),
    "sigmoid": _sigmoid,
}
OPS = tuple(_BINARY) + tuple(_UNARY)


def elementwise(op: str, a: Tensor, b: Operand | None = None) -> Tensor:
    """Apply ``op`` per element.

    Binary ops take a Tensor or a scalar as ``b``; ``scale`` requires a scalar.
    ``relu`` and ``sigmoid`` ignore ``b``.
    """
    if op in _UNARY:
        return Tensor._wrap(_UNARY[op](a.data))
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if b is None:
        raise ValueError(f"op {op!r} needs a second operand")
    if isinstance(b, Tensor):
        if op == "scale":
            raise ValueError("scale takes a scalar factor")
        broadcast_shape(a.shape, b.shape)
        rhs = b.data
        dtype = np.result_type(a.dtype, b.dtype)
    else:
        rhs = b
        dtype = a.dtype
    if op == "div" and np.any(np.abs(rhs) < DIV_EPS):
        raise DivisionNearZero("divisor magnitude below 1e-12")
    with np.errstate(all="ignore"):
        out = _BINARY[op](a.data, rhs)
    return Tensor._wrap(np.asarray(out, dtype=dtype))


def _taps(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Left/right source indices and right-tap weight for each destination index."""
    coord = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    coord = np.clip(coord, 0.0, src - 1)
    i0 = np.floor(coord).astype(np.intp)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, coord - i0


def resize_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a float64 ``(C, H, W)`` array (separable, rows first)."""
    _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x.copy()
    if h != out_h:
        i0, i1, f = _taps(h, out_h)
        f = f[None, :, None]
        x = np.take(x, i0, axis=1) * (1.0 - f) + np.take(x, i1, axis=1) * f
    if w != out_w:
        i0, i1, f = _taps(w, out_w)
        x = np.take(x, i0, axis=2) * (1.0 - f) + np.take(x, i1, axis=2) * f
    return x


def _scatter_axis(g: np.ndarray, src: int, axis: int) -> np.ndarray:
    i0, i1, f = _taps(src, g.shape[axis])
    g = np.moveaxis(g, axis, 0)
    shape = (-1,) + (1,) * (g.ndim - 1)
    out = np.zeros((src,) + g.shape[1:], dtype=np.float64)
    np.add.at(out, i0, g * (1.0 - f).reshape(shape))
    np.add.at(out, i1, g * f.reshape(shape))
    return np.moveaxis(out, 0, axis)


def resize_adjoint(g: np.ndarray, src_h: int, src_w: int) -> np.ndarray:
    """Transpose of :func:`resize_array`: scatter each output gradient to its taps."""
    _, h, w = g.shape
    if (h, w) == (src_h, src_w):
        return g.copy()
    # Forward applies rows then columns, so the adjoint undoes columns first.
    if w != src_w:
        g = _scatter_axis(g, src_w, 2)
    if h != src_h:
        g = _scatter_axis(g, src_h, 1)
    return g


def bilinear_resize(src: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize with half-pixel centres and edge clamping.

    Source coordinate for destination index ``d`` is
    ``(d + 0.5) * src_dim / dst_dim - 0.5`` clamped to ``[0, src_dim - 1]``.
    Same-size resizes return an exact copy.
    """
    if out_h < 1 or out_w < 1:
        raise InvalidDimension(f"target size must be positive, got {out_h}x{out_w}")
    if (src.height, src.width) == (out_h, out_w):
        return src
    out = resize_array(src.data.astype(np.float64), out_h, out_w)
    return Tensor._wrap(out.astype(src.dtype))
