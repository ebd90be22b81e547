"""Interaction kernels: full self/cross attention and their pooled low-rank variants.

All kernels take token tensors of shape ``B x N x C`` and use the row-vector
convention ``Q = X @ W_Q``. The final ``out_map`` is a per-token ``C x C``
channel map (a 1x1 convolution).

LSP (low-dimensional self perception) pools the tokens of ``X`` down to
``r`` channels and, separately, down to ``r`` tokens, and multiplies the two
pooled tensors back to ``N x C``. LCP (low-dimensional collaborative
perception) does the same for a query set and a key/value set and combines
the two cross products into an ``N_kv x N_q`` interaction map applied to the
values. Neither uses a softmax or a score scale.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import DimensionError, RangeError
from .tensor import (
    adaptive_avg_pool,
    as_tensor,
    batched_matmul,
    linear,
    softmax_rows,
    transpose_last2,
)

__all__ = [
    "KernelWeights",
    "init_attention_weights",
    "init_lsp_weights",
    "self_attention",
    "cross_attention",
    "lsp",
    "lcp",
    "check_reduction",
]


@dataclass
class KernelWeights:
    """Weights of one interaction kernel.

    Full attention and LCP use ``w_q``, ``w_k``, ``w_v`` and ``w_out``.
    LSP only has ``w_out`` plus an optional input map ``w_in``.
    """

    w_out: np.ndarray
    w_q: Optional[np.ndarray] = None
    w_k: Optional[np.ndarray] = None
    w_v: Optional[np.ndarray] = None
    w_in: Optional[np.ndarray] = None
    b_q: Optional[np.ndarray] = None
    b_k: Optional[np.ndarray] = None
    b_v: Optional[np.ndarray] = None
    b_out: Optional[np.ndarray] = None

    @property
    def channels(self) -> int:
        return self.w_out.shape[0]

    @property
    def n_params(self) -> int:
        return sum(getattr(self, f.name).size for f in fields(self) if getattr(self, f.name) is not None)

    def check(self, c: int, need_qkv: bool = True) -> None:
        names = ["w_out"] + (["w_q", "w_k", "w_v"] if need_qkv else [])
        if self.w_in is not None:
            names.append("w_in")
        for name in names:
            w = getattr(self, name)
            if w is None:
                raise DimensionError(f"kernel weights are missing {name}")
            if w.shape != (c, c):
                raise DimensionError(f"{name} has shape {w.shape}, expected ({c}, {c}) for C={c}")


def _uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape)


def init_attention_weights(rng, c: int, bias: bool = False, scale: float = 0.05) -> KernelWeights:
    """Seeded Q/K/V/out maps, used by self attention, cross attention and LCP."""
    w = KernelWeights(
        w_q=_uniform(rng, (c, c), scale),
        w_k=_uniform(rng, (c, c), scale),
        w_v=_uniform(rng, (c, c), scale),
        w_out=_uniform(rng, (c, c), scale),
    )
    if bias:
        w.b_q, w.b_k, w.b_v, w.b_out = (_uniform(rng, (c,), scale) for _ in range(4))
    return w


def init_lsp_weights(rng, c: int, bias: bool = False, input_map: bool = False, scale: float = 0.05) -> KernelWeights:
    w = KernelWeights(w_out=_uniform(rng, (c, c), scale))
    if input_map:
        w.w_in = _uniform(rng, (c, c), scale)
    if bias:
        w.b_out = _uniform(rng, (c,), scale)
    return w


def _tokens(x, name):
    return as_tensor(x, 3, name)


def check_reduction(r: int, *extents: int) -> None:
    limit = min(extents)
    if not 1 <= r <= limit:
        raise RangeError(f"reduced extent r={r} must lie in [1, {limit}] for extents {extents}")


def self_attention(ctx, x, w: KernelWeights) -> np.ndarray:
    """Single-head scaled dot-product self attention followed by ``out_map``.

    MACs: ``B * (4*N*C^2 + 2*N^2*C)``.
    """
    x = _tokens(x, "X")
    c = x.shape[2]
    w.check(c)
    return cross_attention(ctx, x, x, w)


def cross_attention(ctx, xq, xkv, w: KernelWeights) -> np.ndarray:
    """Queries from ``xq``, keys and values from ``xkv``.

    MACs: ``B * (2*N_q*C^2 + 2*N_kv*C^2 + 2*N_q*N_kv*C)``.
    """
    xq = _tokens(xq, "Xq")
    xkv = _tokens(xkv, "Xkv")
    if xq.shape[0] != xkv.shape[0] or xq.shape[2] != xkv.shape[2]:
        raise DimensionError(f"query tokens {xq.shape} and key/value tokens {xkv.shape} disagree on B or C")
    c = xq.shape[2]
    w.check(c)
    q = linear(ctx, xq, w.w_q, w.b_q)
    k = linear(ctx, xkv, w.w_k, w.b_k)
    v = linear(ctx, xkv, w.w_v, w.b_v)
    scores = batched_matmul(ctx, q, transpose_last2(k)) / np.sqrt(c)
    mixed = batched_matmul(ctx, softmax_rows(scores), v)
    return linear(ctx, mixed, w.w_out, w.b_out)


def lsp(ctx, x, r: int, w: KernelWeights) -> np.ndarray:
    """Pooled self-bilinear interaction.

    ``X_c = pool_cols(X) (N x r)``, ``X_n = pool_rows(X) (r x C)``,
    output ``out_map(X_c @ X_n)``. MACs: ``B * (2*N*C + N*C*r + N*C^2)``,
    plus ``B*N*C^2`` when the input map is present.
    """
    x = _tokens(x, "X")
    _, n, c = x.shape
    check_reduction(r, n, c)
    w.check(c, need_qkv=False)
    if w.w_in is not None:
        x = linear(ctx, x, w.w_in)
    x_channel = adaptive_avg_pool(ctx, x, r, "cols")
    x_number = adaptive_avg_pool(ctx, x, r, "rows")
    mixed = batched_matmul(ctx, x_channel, x_number)
    return linear(ctx, mixed, w.w_out, w.b_out)


def lcp(ctx, xq, xkv, r: int, w: KernelWeights) -> np.ndarray:
    """Pooled cross interaction between a query set and a key/value set.

    With ``Q = Xq W_Q``, ``K = Xkv W_K``, ``V = Xkv W_V``::

        QK2 = pool_cols(Q) @ pool_rows(K)      # B x N_q  x C
        QK1 = pool_cols(K) @ pool_rows(Q)      # B x N_kv x C
        W   = QK1 @ QK2^T                      # B x N_kv x N_q
        out = out_map(W^T @ V)                 # B x N_q  x C

    ``r`` is simultaneously the reduced channel count and the reduced token
    count of both sets, which is what makes the two products conformable.
    """
    xq = _tokens(xq, "Xq")
    xkv = _tokens(xkv, "Xkv")
    if xq.shape[0] != xkv.shape[0]:
        raise DimensionError(f"batch extents differ: {xq.shape} vs {xkv.shape}")
    if xq.shape[2] != xkv.shape[2]:
        raise DimensionError(f"channel extents differ: {xq.shape} vs {xkv.shape}")
    _, n_q, c = xq.shape
    n_kv = xkv.shape[1]
    check_reduction(r, n_q, n_kv, c)
    w.check(c)
    q = linear(ctx, xq, w.w_q, w.b_q)
    k = linear(ctx, xkv, w.w_k, w.b_k)
    v = linear(ctx, xkv, w.w_v, w.b_v)
    q1 = adaptive_avg_pool(ctx, q, r, "cols")
    q2 = adaptive_avg_pool(ctx, q, r, "rows")
    k1 = adaptive_avg_pool(ctx, k, r, "cols")
    k2 = adaptive_avg_pool(ctx, k, r, "rows")
    qk2 = batched_matmul(ctx, q1, k2)
    qk1 = batched_matmul(ctx, k1, q2)
    interaction = batched_matmul(ctx, qk1, transpose_last2(qk2))
    mixed = batched_matmul(ctx, transpose_last2(interaction), v)
    return linear(ctx, mixed, w.w_out, w.b_out)
