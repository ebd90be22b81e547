"""Loop-based reference implementations used as independent oracles.

These deliberately avoid the vectorised kernels: plain Python loops and
``math.exp`` over nested lists. Only suitable for small sizes.
"""
from __future__ import annotations

import math

import numpy as np


def _mat(a):
    return [[float(v) for v in row] for row in np.asarray(a)]


def naive_matmul(a, b):
    a, b = _mat(a), _mat(b)
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(a[i][p] * b[p][j] for p in range(k)) for j in range(m)] for i in range(n)]


def naive_softmax(row):
    top = max(row)
    e = [math.exp(v - top) for v in row]
    s = sum(e)
    return [v / s for v in e]


def naive_attention(xq, xkv, w_q, w_k, w_v, w_out=None, scale=None):
    """Single-head attention for one ``N x C`` query set; ``scale`` defaults to ``1/sqrt(C)``."""
    q = naive_matmul(xq, w_q)
    k = naive_matmul(xkv, w_k)
    v = naive_matmul(xkv, w_v)
    c = len(q[0])
    scale = 1.0 / math.sqrt(c) if scale is None else scale
    out = []
    for qi in q:
        scores = [sum(a * b for a, b in zip(qi, kj)) * scale for kj in k]
        weights = naive_softmax(scores)
        out.append([sum(weights[j] * v[j][ch] for j in range(len(v))) for ch in range(len(v[0]))])
    if w_out is not None:
        out = naive_matmul(out, w_out)
    return np.array(out)


def naive_pool(x, target, axis):
    """Floor-boundary adaptive mean pooling of a 2-D list along ``axis`` (0 rows, 1 cols)."""
    x = _mat(x)
    if axis == 1:
        return [_pool_1d(r, target) for r in x]
    cols = list(zip(*x))
    pooled = [_pool_1d(list(c), target) for c in cols]
    return [list(r) for r in zip(*pooled)]


def _pool_1d(values, target):
    n = len(values)
    out = []
    for i in range(target):
        lo, hi = (i * n) // target, ((i + 1) * n) // target
        out.append(sum(values[lo:hi]) / (hi - lo))
    return out
