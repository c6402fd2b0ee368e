"""Windowed sums and means over square windows via summed-area tables.

Windows are truncated at the image border and means divide by the number of
pixels actually covered, so every output costs four table lookups regardless
of the radius.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import InvalidDimension, RadiusTooLarge
from .tensor import Tensor


def check_radius(h: int, w: int, r: int) -> None:
    if int(r) != r or r < 1:
        raise InvalidDimension(f"radius must be a positive integer, got {r!r}")
    if r >= min(h, w):
        raise RadiusTooLarge(f"radius {r} must be smaller than min(H, W) = {min(h, w)}")


def _bounds(n: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n)
    return np.maximum(idx - r, 0), np.minimum(idx + r, n - 1) + 1


def integral_image(x: np.ndarray) -> np.ndarray:
    """Per-channel ``(H+1, W+1)`` float64 prefix-sum table with a zero first row/column."""
    c, h, w = x.shape
    table = np.zeros((c, h + 1, w + 1), dtype=np.float64)
    np.cumsum(x, axis=2, dtype=np.float64, out=table[:, 1:, 1:])
    # Row-by-row accumulation: numpy's cumsum over a strided axis is ~5x slower.
    for i in range(1, h + 1):
        table[:, i] += table[:, i - 1]
    return table


def box_sum(x: np.ndarray, r: int) -> np.ndarray:
    """Truncated-window sums of a ``(C, H, W)`` array, returned in float64."""
    _, h, w = x.shape
    table = integral_image(x)
    y0, y1 = _bounds(h, r)
    x0, x1 = _bounds(w, r)
    rows = np.take(table, y1, axis=1)
    rows -= np.take(table, y0, axis=1)
    # np.take keeps C order; fancy indexing on the last axis would not.
    out = np.take(rows, x1, axis=2)
    out -= np.take(rows, x0, axis=2)
    return out


@lru_cache(maxsize=32)
def counts_array(h: int, w: int, r: int) -> np.ndarray:
    """Per-pixel window size ``N_i`` as a read-only float64 ``(1, H, W)`` array."""
    y0, y1 = _bounds(h, r)
    x0, x1 = _bounds(w, r)
    out = np.multiply.outer((y1 - y0).astype(np.float64), (x1 - x0).astype(np.float64))[None]
    out.flags.writeable = False
    return out


def box_mean(x: np.ndarray, r: int) -> np.ndarray:
    _, h, w = x.shape
    out = box_sum(x, r)
    np.divide(out, counts_array(h, w, r), out=out)
    return out


def box_mean_adjoint(g: np.ndarray, r: int) -> np.ndarray:
    """Transpose of :func:`box_mean`; windows are symmetric so it is ``box_sum(g / N)``."""
    _, h, w = g.shape
    return box_sum(g / counts_array(h, w, r), r)


def windowed_sum(t: Tensor, r: int) -> Tensor:
    """Sum of ``t`` over the radius-``r`` window around every pixel.

    >>> windowed_sum(Tensor(np.ones((3, 3))), 1).data[0]
    array([[4., 6., 4.],
           [6., 9., 6.],
           [4., 6., 4.]], dtype=float32)
    """
    check_radius(t.height, t.width, r)
    return Tensor._wrap(box_sum(t.data, r).astype(t.dtype))


def windowed_mean(t: Tensor, r: int) -> Tensor:
    check_radius(t.height, t.width, r)
    return Tensor._wrap(box_mean(t.data, r).astype(t.dtype))


def pixel_counts(h: int, w: int, r: int) -> Tensor:
    check_radius(h, w, r)
    return Tensor._wrap(counts_array(h, w, r).astype(np.float32))
