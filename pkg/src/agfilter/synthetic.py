"""Seeded synthetic images for demos, tests and the fitting task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionWeights, attention_forward, default_weights, random_weights
from .guided import FilterParams, forward
from .tensor import Tensor, resize_array


def texture(seed: int, height: int, width: int, channels: int = 1) -> Tensor:
    """Smooth random texture in [0, 1]: a few random plane waves plus fine noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    planes = []
    for _ in range(channels):
        acc = np.zeros((height, width))
        for _ in range(6):
            fy, fx = rng.uniform(-0.4, 0.4, 2)
            acc += rng.uniform(0.5, 1.0) * np.sin(fy * yy + fx * xx + rng.uniform(0, 2 * np.pi))
        acc += 0.3 * rng.standard_normal((height, width))
        acc -= acc.min()
        planes.append(acc / acc.max())
    return Tensor(np.stack(planes), dtype=np.float32)


def noisy_step(seed: int, size: int = 64, column: int = 32, sigma: float = 0.1) -> tuple[Tensor, Tensor]:
    """Vertical 0 -> 1 step at ``column`` and a copy with additive Gaussian noise."""
    rng = np.random.default_rng(seed)
    clean = np.zeros((1, size, size))
    clean[:, :, column:] = 1.0
    noisy = clean + sigma * rng.standard_normal(clean.shape)
    return Tensor(clean, dtype=np.float32), Tensor(noisy, dtype=np.float32)


@dataclass
class FitTask:
    guidance: Tensor
    source: Tensor
    target: Tensor
    hidden: AttentionWeights
    initial: AttentionWeights


def fit_task(seed: int = 0, size: int = 32, channels: int = 2, p: FilterParams = FilterParams()) -> FitTask:
    """Target produced by the filter under a hidden random attention weight set.

    Guidance is ``size x size``, the filtering input half that; fitting starts
    from :func:`default_weights`.
    """
    rng = np.random.default_rng(seed)
    I = texture(int(rng.integers(2**31)), size, size, channels)
    O = texture(int(rng.integers(2**31)), size // 2, size // 2, channels)
    hidden = random_weights(channels, rng, scale=2.0)
    Ia = I.data.astype(np.float64)
    Oa = O.data.astype(np.float64)
    T = attention_forward(Oa, resize_array(Ia, O.height, O.width), hidden).T
    out = forward(Ia, Oa, T, p.radius, p.regularization).out
    return FitTask(I, O, Tensor(out, dtype=np.float32), hidden, default_weights(channels))
