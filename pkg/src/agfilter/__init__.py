"""Attention guided filter: edge-preserving joint upsampling with attention-weighted fits."""

from .attention import AttentionWeights, attention_block, default_weights, load_weights, save_weights
from .autodiff import GradBundle, ag_filter_vjp, fit_attention, gradcheck, vjp_primitive
from .boxfilter import pixel_counts, windowed_mean, windowed_sum
from .guided import (
    AGCoefficients,
    FilterParams,
    apply_highres,
    attention_guided_filter,
    average_coefficients,
    guided_filter,
    per_window_coefficients,
)
from .imageio import gamma_correct, read_image, read_tensor, write_image, write_tensor
from .metrics import ConfusionCounts, auc, confusion, overlap_error
from .tensor import Tensor, bilinear_resize, elementwise

__all__ = [
    "AGCoefficients",
    "AttentionWeights",
    "ConfusionCounts",
    "FilterParams",
    "GradBundle",
    "Tensor",
    "ag_filter_vjp",
    "apply_highres",
    "attention_block",
    "attention_guided_filter",
    "auc",
    "average_coefficients",
    "bilinear_resize",
    "confusion",
    "default_weights",
    "elementwise",
    "fit_attention",
    "gamma_correct",
    "gradcheck",
    "guided_filter",
    "load_weights",
    "overlap_error",
    "per_window_coefficients",
    "pixel_counts",
    "read_image",
    "read_tensor",
    "save_weights",
    "vjp_primitive",
    "windowed_mean",
    "windowed_sum",
    "write_image",
    "write_tensor",
]
