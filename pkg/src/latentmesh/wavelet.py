"""Single-level orthonormal Haar transform along one axis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, LengthError

SQRT2 = np.sqrt(2.0)

# rows: (low, high) analysis filters applied to the pair (x[2k], x[2k+1])
HAAR_ANALYSIS = np.array([[1.0, 1.0], [1.0, -1.0]]) / SQRT2


@dataclass
class WaveletPair:
    """Approximation (``low``) and detail (``high``) coefficients."""

    low: np.ndarray
    high: np.ndarray
    axis: int
    original_extent: int

    def __post_init__(self):
        if self.low.shape != self.high.shape:
            raise DimensionError(
                f"low and high coefficients differ in shape: {self.low.shape} vs {self.high.shape}"
            )


def dwt_haar(x, axis: int = -1) -> WaveletPair:
    """Split ``x`` along ``axis`` into pairwise sums and differences scaled by 1/sqrt(2).

    The axis length must be even; pad before calling if it is not.
    """
    x = np.asarray(x, dtype=np.float64)
    axis = axis % x.ndim
    n = x.shape[axis]
    if n % 2:
        raise LengthError(f"Haar transform needs an even extent along axis {axis}, got {n}; pad the input first")
    even = np.take(x, np.arange(0, n, 2), axis=axis)
    odd = np.take(x, np.arange(1, n, 2), axis=axis)
    return WaveletPair((even + odd) / SQRT2, (even - odd) / SQRT2, axis, n)


def idwt_haar(pair: WaveletPair) -> np.ndarray:
    """Invert :func:`dwt_haar` by interleaving ``(low+high)/sqrt2`` and ``(low-high)/sqrt2``."""
    low = np.asarray(pair.low, dtype=np.float64)
    high = np.asarray(pair.high, dtype=np.float64)
    if low.shape != high.shape:
        raise DimensionError(f"low and high coefficients differ in shape: {low.shape} vs {high.shape}")
    axis = pair.axis % low.ndim
    even = (low + high) / SQRT2
    odd = (low - high) / SQRT2
    stacked = np.stack([even, odd], axis=axis + 1)
    shape = list(low.shape)
    shape[axis] *= 2
    return stacked.reshape(shape)
