"""Attention guided filter: attention-weighted local linear fit plus joint upsampling.

For every low-resolution window ``w_k`` of radius ``r`` the filter fits
``O ~ a_k * I_l + b_k`` with residuals weighted by the attention map ``T``::

    k_k = sum(T^2 I) / sum(T)                       (over w_k)
    a_k = (mean(T^2 I O) - k_k mean(T O)) / (mean(T^2 I^2) - k_k mean(T I) + lam)
    b_k = (mean(T O) - a_k mean(T I)) / mean(T)

The per-window coefficients are box-averaged into ``A_l, B_l``, bilinearly
upsampled to the guidance grid and blended as ``A_h * I + B_h``. With ``T == 1``
this is exactly the classic guided filter.

All internal arithmetic is float64; outputs take the dtype of the guidance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .boxfilter import box_mean, box_sum, check_radius, counts_array
from .errors import AttentionOutOfRange, DegenerateDenominator, ShapeMismatch, ValidationError
from .tensor import Tensor, broadcast_shape, resize_array

DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class FilterParams:
    """Window radius (on the low-resolution grid) and regularisation weight."""

    radius: int = 2
    regularization: float = 0.01

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValidationError(f"radius must be an integer >= 1, got {self.radius!r}")
        if not (self.regularization >= 0 and np.isfinite(self.regularization)):
            raise ValidationError(f"regularization must be finite and >= 0, got {self.regularization!r}")


@dataclass(frozen=True)
class AGCoefficients:
    A: Tensor
    B: Tensor
    resolution: Literal["low", "high"] = "low"

    def __post_init__(self):
        if self.A.shape != self.B.shape:
            raise ShapeMismatch(f"A {self.A.shape} and B {self.B.shape} differ")


def _check_attention(T: np.ndarray, hw: tuple[int, int]) -> None:
    if T.shape[0] != 1 or T.shape[1:] != hw:
        raise ShapeMismatch(f"attention map must be 1x{hw[0]}x{hw[1]}, got {T.shape}")
    if T.min() <= 0.0:
        raise AttentionOutOfRange("attention weights must be strictly positive")
    if T.max() > 1.0:
        raise AttentionOutOfRange("attention weights must not exceed 1")


@dataclass
class CoefficientCache:
    """Intermediates of the coefficient solve, kept for the backward pass."""

    I: np.ndarray
    O: np.ndarray
    T: np.ndarray
    N: np.ndarray
    sT: np.ndarray
    mT: np.ndarray
    mTI: np.ndarray
    mTO: np.ndarray
    k: np.ndarray
    den: np.ndarray
    a: np.ndarray
    b: np.ndarray


def solve_coefficients(I: np.ndarray, O: np.ndarray, T: np.ndarray, r: int, lam: float) -> CoefficientCache:
    """Per-window ``a_k, b_k`` for float64 arrays ``I``, ``O`` (C, h, w) and ``T`` (1, h, w)."""
    _, h, w = broadcast_shape(I.shape, O.shape)
    N = counts_array(h, w, r)
    T2 = T * T
    sT = box_sum(T, r)
    mT = sT / N
    mTI = box_mean(T * I, r)
    mTO = box_mean(T * O, r)
    mT2IO = box_mean(T2 * I * O, r)
    mT2II = box_mean(T2 * I * I, r)
    # N_k * mean(X * T * I) folded into one ratio of window sums
    k = box_sum(T2 * I, r) / sT
    num = mT2IO - k * mTO
    den = mT2II - k * mTI + lam
    if np.any(np.abs(den) < DEGENERATE_EPS):
        raise DegenerateDenominator(
            "slope denominator vanished; guidance is constant over a window and regularization is 0"
        )
    if lam > 0 and T.min() == T.max() and den.min() < lam / 2:
        # uniform attention makes the denominator a variance plus lam
        raise DegenerateDenominator(f"denominator {den.min():.3g} fell below lam/2")
    a = num / den
    b = (mTO - a * mTI) / mT
    return CoefficientCache(I=I, O=O, T=T, N=N, sT=sT, mT=mT, mTI=mTI, mTO=mTO, k=k, den=den, a=a, b=b)


@dataclass
class ForwardCache:
    """Everything the filter computed on the way to its output."""

    coeffs: CoefficientCache
    guide: np.ndarray
    r: int
    A_low: np.ndarray
    B_low: np.ndarray
    A_high: np.ndarray
    B_high: np.ndarray
    out: np.ndarray


def forward(I: np.ndarray, O: np.ndarray, T: np.ndarray, r: int, lam: float) -> ForwardCache:
    """Full float64 pipeline: downsample guidance, solve, average, upsample, blend."""
    _, H, W = I.shape
    _, h, w = O.shape
    if h > H or w > W:
        raise ShapeMismatch(f"filtering input {h}x{w} is larger than guidance {H}x{W}")
    broadcast_shape((I.shape[0], h, w), O.shape)
    _check_attention(T, (h, w))
    check_radius(h, w, r)
    I_low = resize_array(I, h, w)
    coeffs = solve_coefficients(I_low, O, T, r, lam)
    A_low = box_mean(coeffs.a, r)
    B_low = box_mean(coeffs.b, r)
    A_high = resize_array(A_low, H, W)
    B_high = resize_array(B_low, H, W)
    out = A_high * I + B_high
    return ForwardCache(coeffs, I, r, A_low, B_low, A_high, B_high, out)


def _f64(t: Tensor) -> np.ndarray:
    return t.data.astype(np.float64)


def _result_dtype(*ts: Tensor):
    return np.result_type(*(t.dtype for t in ts))


def per_window_coefficients(I_l: Tensor, O: Tensor, T: Tensor, p: FilterParams = FilterParams()) -> tuple[Tensor, Tensor]:
    """Closed-form slope/offset of the attention-weighted fit for every window."""
    if (I_l.height, I_l.width) != (O.height, O.width):
        raise ShapeMismatch(f"guidance {I_l.shape} and input {O.shape} differ in size")
    broadcast_shape(I_l.shape, O.shape)
    _check_attention(T.data, (O.height, O.width))
    check_radius(O.height, O.width, p.radius)
    c = solve_coefficients(_f64(I_l), _f64(O), _f64(T), p.radius, p.regularization)
    dtype = _result_dtype(I_l, O)
    return Tensor._wrap(c.a.astype(dtype)), Tensor._wrap(c.b.astype(dtype))


def average_coefficients(a: Tensor, b: Tensor, p: FilterParams = FilterParams()) -> AGCoefficients:
    """Average each pixel's coefficients over all windows that contain it."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"a {a.shape} and b {b.shape} differ")
    check_radius(a.height, a.width, p.radius)
    A = box_mean(_f64(a), p.radius).astype(a.dtype)
    B = box_mean(_f64(b), p.radius).astype(b.dtype)
    return AGCoefficients(Tensor._wrap(A), Tensor._wrap(B), "low")


def apply_highres(c: AGCoefficients, I: Tensor) -> Tensor:
    """Upsample the coefficient maps to the guidance grid and blend ``A_h * I + B_h``."""
    A, B = _f64(c.A), _f64(c.B)
    if (c.A.height, c.A.width) != (I.height, I.width):
        if c.resolution == "high":
            raise ShapeMismatch("high-resolution coefficients must match the guidance size")
        A = resize_array(A, I.height, I.width)
        B = resize_array(B, I.height, I.width)
    broadcast_shape(I.shape, A.shape)
    out = A * _f64(I) + B
    return Tensor._wrap(out.astype(_result_dtype(I, c.A)))


def attention_guided_filter(I: Tensor, O: Tensor, T: Tensor, p: FilterParams = FilterParams()) -> Tensor:
    """Filter low-resolution ``O`` under high-resolution guidance ``I`` and attention ``T``.

    ``T`` is a single-channel map on ``O``'s grid with values in (0, 1]. The
    output has the guidance's height and width; channels follow the broadcast
    of ``I`` and ``O``.
    """
    fc = forward(_f64(I), _f64(O), _f64(T), p.radius, p.regularization)
    return Tensor._wrap(fc.out.astype(_result_dtype(I, O)))


def guided_filter(I: Tensor, O: Tensor, p: FilterParams = FilterParams(), T: Optional[Tensor] = None) -> Tensor:
    """Classic guided filter: :func:`attention_guided_filter` with uniform attention."""
    if T is None:
        T = Tensor.full(O.height, O.width, 1.0, dtype=O.dtype)
    return attention_guided_filter(I, O, T, p)
