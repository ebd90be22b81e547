"""Dense float64 array operations with multiply-accumulate (MAC) accounting.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every operation
that performs multiplications takes a :class:`CountingContext` and bills it
according to a fixed convention:

* matrix products: one MAC per scalar multiply (``m*n*k``)
* depthwise convolution: ``n*k`` per convolved row
* adaptive average pooling: one MAC per input element
* softmax, additions, bias terms and elementwise scaling are free

Contexts are passed explicitly so that concurrently running lanes can each
own one and sum them afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, RangeError

__all__ = [
    "CountingContext",
    "as_tensor",
    "matmul",
    "batched_matmul",
    "linear",
    "softmax_rows",
    "adaptive_avg_pool",
    "pool_bins",
    "conv1d_depthwise",
    "transpose_last2",
]


@dataclass
class CountingContext:
    """Accumulates MACs billed by the operations it is passed to."""

    mac_count: int = 0
    enabled: bool = True

    def add(self, macs: int) -> None:
        if macs < 0:
            raise RangeError(f"cannot bill a negative MAC count ({macs})")
        if self.enabled:
            self.mac_count += int(macs)

    def reset(self) -> None:
        self.mac_count = 0

    def merge(self, *others: "CountingContext") -> None:
        """Fold the counts of per-lane contexts into this one."""
        for other in others:
            self.add(other.mac_count)


def _bill(ctx, macs):
    if ctx is not None:
        ctx.add(macs)


def as_tensor(x, ndim=None, name="tensor") -> np.ndarray:
    """Return ``x`` as a float64 array, optionally checking its rank."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None:
        allowed = (ndim,) if isinstance(ndim, int) else tuple(ndim)
        if arr.ndim not in allowed:
            raise DimensionError(
                f"{name} must have rank {' or '.join(map(str, allowed))}, got shape {arr.shape}"
            )
    return arr


def matmul(ctx, a, b) -> np.ndarray:
    """``a @ b`` for rank-2 operands; bills ``m*n*k``."""
    a = as_tensor(a, 2, "left operand")
    b = as_tensor(b, 2, "right operand")
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    _bill(ctx, m * n * k)
    return a @ b


def batched_matmul(ctx, a, b) -> np.ndarray:
    """Slice-wise product of ``b x m x k`` and ``b x k x n``; bills ``b*m*n*k``."""
    a = as_tensor(a, 3, "left operand")
    b = as_tensor(b, 3, "right operand")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"batch extents differ: {a.shape} vs {b.shape}")
    if a.shape[2] != b.shape[1]:
        raise DimensionError(f"batched matmul inner extents differ: {a.shape} @ {b.shape}")
    bsz, m, k = a.shape
    n = b.shape[2]
    _bill(ctx, bsz * m * n * k)
    return np.matmul(a, b)


def linear(ctx, x, weight, bias=None) -> np.ndarray:
    """Apply ``x @ weight (+ bias)`` over the last axis of ``x`` (any leading shape).

    Billed exactly like a matmul of the flattened rows: ``rows * k * n``.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = as_tensor(weight, 2, "weight")
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"cannot map {x.shape} with weight {weight.shape}")
    lead = x.shape[:-1]
    out = matmul(ctx, x.reshape(-1, x.shape[-1]), weight)
    if bias is not None:
        out = out + bias
    return out.reshape(*lead, weight.shape[1])


def softmax_rows(x) -> np.ndarray:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def pool_bins(extent: int, target: int) -> np.ndarray:
    """Start offsets of the ``target`` contiguous bins covering ``range(extent)``.

    Bin ``i`` spans ``floor(i*extent/target)`` up to ``floor((i+1)*extent/target)``.
    """
    if not 1 <= target <= extent:
        raise RangeError(f"pool target {target} outside [1, {extent}]")
    return (np.arange(target + 1) * extent) // target


_AXES = {"rows": -2, "cols": -1}


def adaptive_avg_pool(ctx, x, target: int, axis: str) -> np.ndarray:
    """Average contiguous bins so that ``axis`` ends up with ``target`` entries.

    ``axis`` is ``"rows"`` (second to last) or ``"cols"`` (last). Works on
    rank-2 and rank-3 input; bills one MAC per input element.
    """
    x = as_tensor(x, (2, 3), "pool input")
    if axis not in _AXES:
        raise ConfigurationError(f"axis must be 'rows' or 'cols', got {axis!r}")
    ax = x.ndim + _AXES[axis]
    edges = pool_bins(x.shape[ax], target)
    sums = np.add.reduceat(x, edges[:-1], axis=ax)
    counts = np.diff(edges).astype(np.float64)
    shape = [1] * x.ndim
    shape[ax] = target
    _bill(ctx, x.size)
    return sums / counts.reshape(shape)


def conv1d_depthwise(ctx, x, kernel) -> np.ndarray:
    """Same-length correlation of each row of ``x`` with ``kernel``, zero padded.

    ``out[i] = sum_j kernel[j] * x[i + j - k//2]``. Bills ``n*k`` per row.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 1:
        raise DimensionError(f"kernel must be rank 1, got shape {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ConfigurationError(f"kernel length must be odd for same padding, got {k}")
    n = x.shape[-1]
    half = k // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    xp = np.pad(x, pad)
    out = np.zeros_like(x)
    for j in range(k):
        out += kernel[j] * xp[..., j:j + n]
    _bill(ctx, x.size * k)
    return out


def transpose_last2(x) -> np.ndarray:
    x = as_tensor(x, 3, "transpose input")
    return np.ascontiguousarray(np.swapaxes(x, 1, 2))
