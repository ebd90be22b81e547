"""Stage-1 frequency-domain feature extractor and GRU temporal encoder.

Per-frame image features ``T x C`` are split by a channel-axis Haar
transform. The low band goes through single-head temporal attention (frames
are the tokens), the high band through a depthwise 1-D convolution along the
channels, and the inverse transform merges the two back to ``T x C``. A GRU
then folds the merged sequence into one conditioning vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, LengthError
from .tensor import as_tensor, conv1d_depthwise, linear, matmul, softmax_rows
from .wavelet import WaveletPair, dwt_haar, idwt_haar

__all__ = [
    "FeatureSequence",
    "HybridFeatures",
    "GruWeights",
    "LifdWeights",
    "init_lifd_weights",
    "identity_lifd_weights",
    "decompose",
    "low_branch_attention",
    "high_branch_conv",
    "merge",
    "gru_cell",
    "gru_encode",
    "run_lifd",
]


@dataclass
class FeatureSequence:
    frames: np.ndarray

    def __post_init__(self):
        self.frames = as_tensor(self.frames, 2, "feature frames")
        if self.frames.shape[0] < 1:
            raise DimensionError("a feature sequence needs at least one frame")
        if self.frames.shape[1] % 2:
            raise LengthError(f"channel count must be even for the Haar split, got {self.frames.shape[1]}")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def channels(self) -> int:
        return self.frames.shape[1]


@dataclass
class HybridFeatures:
    per_frame: np.ndarray
    temporal: np.ndarray


@dataclass
class GruWeights:
    """Single-layer GRU, gates stacked in (reset, update, candidate) order.

    ``w_input`` is ``C_in x 3H`` and ``w_hidden`` is ``H x 3H``.
    """

    w_input: np.ndarray
    w_hidden: np.ndarray
    b_input: np.ndarray
    b_hidden: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[0]


@dataclass
class LifdWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    conv_kernel: np.ndarray
    gru: GruWeights


def init_lifd_weights(rng, c_img: int, c_hidden: int, kernel_size: int = 3, scale: float = 0.05) -> LifdWeights:
    if c_img % 2:
        raise LengthError(f"channel count must be even, got {c_img}")
    if kernel_size % 2 == 0:
        raise ConfigurationError(f"conv kernel length must be odd, got {kernel_size}")
    d = c_img // 2

    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    return LifdWeights(
        w_q=u(d, d),
        w_k=u(d, d),
        w_v=u(d, d),
        conv_kernel=u(kernel_size),
        gru=GruWeights(u(c_img, 3 * c_hidden), u(c_hidden, 3 * c_hidden), u(3 * c_hidden), u(3 * c_hidden)),
    )


def identity_lifd_weights(c_img: int, c_hidden: int) -> LifdWeights:
    """Identity value map, zero query/key maps, identity conv kernel, zero GRU.

    The attention then averages the low band uniformly over frames, so the
    branch stage is an exact identity whenever all frames agree (or ``T == 1``).
    """
    d = c_img // 2
    z = np.zeros((d, d))
    return LifdWeights(
        w_q=z.copy(),
        w_k=z.copy(),
        w_v=np.eye(d),
        conv_kernel=np.array([0.0, 1.0, 0.0]),
        gru=GruWeights(
            np.zeros((c_img, 3 * c_hidden)),
            np.zeros((c_hidden, 3 * c_hidden)),
            np.zeros(3 * c_hidden),
            np.zeros(3 * c_hidden),
        ),
    )


def decompose(features: FeatureSequence, axis: int = -1) -> WaveletPair:
    """Channel-axis Haar split of every frame: two ``T x C/2`` bands."""
    return dwt_haar(features.frames, axis=axis)


def low_branch_attention(ctx, low, w: LifdWeights) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d_k)) V`` over the frames of the low band."""
    low = as_tensor(low, 2, "low band")
    d = low.shape[1]
    for name in ("w_q", "w_k", "w_v"):
        if getattr(w, name).shape != (d, d):
            raise DimensionError(f"{name} has shape {getattr(w, name).shape}, low band has {d} channels")
    q = matmul(ctx, low, w.w_q)
    k = matmul(ctx, low, w.w_k)
    v = matmul(ctx, low, w.w_v)
    scores = matmul(ctx, q, k.T) / np.sqrt(d)
    return matmul(ctx, softmax_rows(scores), v)


def high_branch_conv(ctx, high, w: LifdWeights) -> np.ndarray:
    high = as_tensor(high, 2, "high band")
    return conv1d_depthwise(ctx, high, w.conv_kernel)


def merge(global_part, local_part, axis: int = -1) -> np.ndarray:
    """Inverse Haar with the attention output as the low band and the conv output as the high band."""
    g = np.asarray(global_part, dtype=np.float64)
    l = np.asarray(local_part, dtype=np.float64)
    if g.shape != l.shape:
        raise DimensionError(f"global {g.shape} and local {l.shape} parts must match")
    ax = axis % g.ndim
    return idwt_haar(WaveletPair(g, l, ax, 2 * g.shape[ax]))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_cell(ctx, x, h, w: GruWeights) -> np.ndarray:
    """One GRU step for a single input row ``x`` and hidden state ``h``."""
    gi = linear(ctx, x[None, :], w.w_input, w.b_input)[0]
    return _gru_update(ctx, gi, h, w)


def _gru_update(ctx, gi, h, w):
    hs = w.hidden_size
    gh = linear(ctx, h[None, :], w.w_hidden, w.b_hidden)[0]
    r = _sigmoid(gi[:hs] + gh[:hs])
    z = _sigmoid(gi[hs:2 * hs] + gh[hs:2 * hs])
    cand = np.tanh(gi[2 * hs:] + r * gh[2 * hs:])
    return (1.0 - z) * cand + z * h


def gru_encode(ctx, hybrid, w: GruWeights) -> np.ndarray:
    """Run the GRU over the ``T`` rows of ``hybrid`` from a zero state; return the last state."""
    hybrid = as_tensor(hybrid, 2, "hybrid features")
    if hybrid.shape[0] < 1:
        raise DimensionError("GRU needs at least one time step")
    hs = w.hidden_size
    if w.w_input.shape != (hybrid.shape[1], 3 * hs) or w.w_hidden.shape != (hs, 3 * hs):
        raise DimensionError(
            f"GRU weights {w.w_input.shape}/{w.w_hidden.shape} do not fit input width {hybrid.shape[1]}, hidden {hs}"
        )
    # input projections for all steps at once; billed the same as per-step products
    gi_all = linear(ctx, hybrid, w.w_input, w.b_input)
    h = np.zeros(hs)
    for gi in gi_all:
        h = _gru_update(ctx, gi, h, w)
    return h


def run_lifd(ctx, features: FeatureSequence, w: LifdWeights) -> HybridFeatures:
    pair = decompose(features)
    global_part = low_branch_attention(ctx, pair.low, w)
    local_part = high_branch_conv(ctx, pair.high, w)
    per_frame = merge(global_part, local_part)
    return HybridFeatures(per_frame=per_frame, temporal=gru_encode(ctx, per_frame, w.gru))
