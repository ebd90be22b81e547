import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentmesh.errors import ConfigurationError, DimensionError, RangeError
from latentmesh.reference import naive_pool
from latentmesh.tensor import (
    CountingContext,
    adaptive_avg_pool,
    batched_matmul,
    conv1d_depthwise,
    linear,
    matmul,
    softmax_rows,
    transpose_last2,
)

from .oracles import triple_loop_macs


class TestMatmul:
    def test_identity(self, rng):
        ctx = CountingContext()
        x = rng.standard_normal((2, 2))
        np.testing.assert_array_equal(matmul(ctx, np.eye(2), x), x)
        assert ctx.mac_count == 8

    def test_hand_product(self):
        out = matmul(CountingContext(), [[1, 2], [3, 4]], [[5, 6], [7, 8]])
        np.testing.assert_array_equal(out, [[19, 22], [43, 50]])

    def test_count_matches_triple_loop(self, rng):
        ctx = CountingContext()
        matmul(ctx, rng.standard_normal((3, 4)), rng.standard_normal((4, 5)))
        assert ctx.mac_count == triple_loop_macs(3, 4, 5) == 60

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(None, np.zeros((2, 3)), np.zeros((2, 3)))

    def test_rank_checked(self):
        with pytest.raises(DimensionError):
            matmul(None, np.zeros(3), np.zeros((3, 1)))


class TestBatchedMatmul:
    def test_single_batch_is_matmul(self, rng):
        a, b = rng.standard_normal((1, 3, 4)), rng.standard_normal((1, 4, 2))
        np.testing.assert_array_equal(batched_matmul(None, a, b)[0], matmul(None, a[0], b[0]))

    def test_zero_slice(self, rng):
        a = rng.standard_normal((2, 3, 3))
        a[1] = 0.0
        out = batched_matmul(None, a, rng.standard_normal((2, 3, 3)))
        assert np.all(out[1] == 0.0)
        assert np.any(out[0] != 0.0)

    def test_count(self, rng):
        ctx = CountingContext()
        batched_matmul(ctx, rng.standard_normal((3, 2, 2)), rng.standard_normal((3, 2, 2)))
        assert ctx.mac_count == 3 * triple_loop_macs(2, 2, 2) == 24

    def test_batch_mismatch(self):
        with pytest.raises(DimensionError, match="batch"):
            batched_matmul(None, np.zeros((2, 2, 2)), np.zeros((3, 2, 2)))


class TestSoftmax:
    def test_uniform_row(self):
        np.testing.assert_allclose(softmax_rows(np.full((1, 5), 3.7)), np.full((1, 5), 0.2), atol=1e-15)

    def test_closed_form(self):
        out = softmax_rows(np.array([[0.0, math.log(2.0)]]))
        np.testing.assert_allclose(out, [[1 / 3, 2 / 3]], atol=1e-15)

    def test_dominant_entry(self):
        out = softmax_rows(np.array([[50.0, 0.0, 0.0, 0.0]]))
        assert out[0, 0] >= 1 - 1e-15

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 12)),
                  elements=st.floats(-100, 100)))
    def test_rows_sum_to_one(self, x):
        out = softmax_rows(x)
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.isfinite(out))


class TestAdaptivePool:
    def test_identity_when_target_is_extent(self, rng):
        x = rng.standard_normal((5, 3))
        np.testing.assert_array_equal(adaptive_avg_pool(None, x, 5, "rows"), x)
        np.testing.assert_array_equal(adaptive_avg_pool(None, x, 3, "cols"), x)

    def test_target_one_is_mean(self, rng):
        x = rng.standard_normal((5, 3))
        np.testing.assert_allclose(adaptive_avg_pool(None, x, 1, "rows"), x.mean(axis=0, keepdims=True))
        np.testing.assert_allclose(adaptive_avg_pool(None, x, 1, "cols"), x.mean(axis=1, keepdims=True))

    def test_hand_means(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        np.testing.assert_allclose(adaptive_avg_pool(None, x, 2, "rows"), [[1.5], [3.5]])
        np.testing.assert_allclose(adaptive_avg_pool(None, x.T, 2, "cols"), [[1.5, 3.5]])

    def test_uneven_bins_match_naive(self, rng):
        x = rng.standard_normal((7, 5))
        np.testing.assert_allclose(adaptive_avg_pool(None, x, 3, "rows"), naive_pool(x, 3, axis=0), atol=1e-14)
        np.testing.assert_allclose(adaptive_avg_pool(None, x, 2, "cols"), naive_pool(x, 2, axis=1), atol=1e-14)

    def test_rank3_pools_each_batch(self, rng):
        x = rng.standard_normal((2, 6, 4))
        out = adaptive_avg_pool(None, x, 3, "rows")
        for b in range(2):
            np.testing.assert_allclose(out[b], adaptive_avg_pool(None, x[b], 3, "rows"))

    def test_billed_per_input_element(self, rng):
        ctx = CountingContext()
        adaptive_avg_pool(ctx, rng.standard_normal((2, 6, 4)), 3, "rows")
        assert ctx.mac_count == 48

    @pytest.mark.parametrize("target", [0, 6])
    def test_range(self, target):
        with pytest.raises(RangeError):
            adaptive_avg_pool(None, np.zeros((5, 2)), target, "rows")

    def test_bad_axis(self):
        with pytest.raises(ConfigurationError):
            adaptive_avg_pool(None, np.zeros((5, 2)), 1, "depth")

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_global_mean_preserved_for_even_bins(self, target, per_bin, cols, seed):
        x = np.random.default_rng(seed).standard_normal((target * per_bin, cols))
        out = adaptive_avg_pool(None, x, target, "rows")
        assert abs(out.mean() - x.mean()) < 1e-12


class TestConv:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal(7)
        np.testing.assert_array_equal(conv1d_depthwise(None, x, [0.0, 1.0, 0.0]), x)

    def test_zero_kernel(self, rng):
        assert np.all(conv1d_depthwise(None, rng.standard_normal(7), [0.0, 0.0, 0.0]) == 0)

    def test_hand_correlation(self):
        np.testing.assert_array_equal(conv1d_depthwise(None, [1.0, 2.0, 3.0], [1.0, 1.0, 1.0]), [3, 6, 5])

    def test_not_flipped(self):
        # correlation: out[i] = x[i-1]*k0 + x[i]*k1 + x[i+1]*k2
        np.testing.assert_array_equal(conv1d_depthwise(None, [1.0, 2.0, 3.0], [1.0, 0.0, 0.0]), [0, 1, 2])

    def test_even_kernel(self):
        with pytest.raises(ConfigurationError):
            conv1d_depthwise(None, np.zeros(4), [1.0, 1.0])

    def test_count(self, rng):
        ctx = CountingContext()
        conv1d_depthwise(ctx, rng.standard_normal((3, 10)), np.ones(5))
        assert ctx.mac_count == 3 * 10 * 5


class TestTranspose:
    def test_involution(self, rng):
        x = rng.standard_normal((2, 3, 4))
        np.testing.assert_array_equal(transpose_last2(transpose_last2(x)), x)

    def test_index_walk(self):
        x = np.arange(6.0).reshape(1, 2, 3)
        t = transpose_last2(x)
        assert t.shape == (1, 3, 2)
        for i in range(2):
            for j in range(3):
                assert t[0, j, i] == x[0, i, j]

    def test_symmetric_slice(self, rng):
        a = rng.standard_normal((3, 3))
        s = (a + a.T)[None]
        np.testing.assert_array_equal(transpose_last2(s), s)

    def test_rank(self):
        with pytest.raises(DimensionError):
            transpose_last2(np.zeros((2, 2)))


class TestCountingContext:
    def test_reset_and_monotone(self, rng):
        ctx = CountingContext()
        seen = [0]
        for _ in range(5):
            matmul(ctx, rng.standard_normal((2, 3)), rng.standard_normal((3, 2)))
            seen.append(ctx.mac_count)
        assert seen == sorted(seen)
        ctx.reset()
        assert ctx.mac_count == 0

    def test_disabled(self, rng):
        ctx = CountingContext(enabled=False)
        matmul(ctx, np.eye(3), np.eye(3))
        assert ctx.mac_count == 0

    def test_merge(self):
        a, b, c = CountingContext(5), CountingContext(7), CountingContext(1)
        a.merge(b, c)
        assert a.mac_count == 13


def test_mac_parity_random_expression_trees():
    """Random op chains: the context total equals the sum of per-op formulas."""
    rng = np.random.default_rng(99)
    for case in range(60):
        ctx = CountingContext()
        expected = 0
        m, k = (int(v) for v in rng.integers(1, 7, size=2))
        x = rng.standard_normal((m, k))
        for _ in range(int(rng.integers(1, 8))):
            op = rng.integers(6)
            m, k = x.shape
            if op == 0:
                n = int(rng.integers(1, 7))
                x = matmul(ctx, x, rng.standard_normal((k, n)))
                expected += m * k * n
            elif op == 1:
                b = int(rng.integers(1, 4))
                n = int(rng.integers(1, 5))
                y = batched_matmul(ctx, np.broadcast_to(x, (b, m, k)), rng.standard_normal((b, k, n)))
                expected += b * m * n * k
                x = y[0]
            elif op == 2:
                x = softmax_rows(x)
            elif op == 3:
                axis = "rows" if rng.integers(2) else "cols"
                target = int(rng.integers(1, (m if axis == "rows" else k) + 1))
                x = adaptive_avg_pool(ctx, x, target, axis)
                expected += m * k
            elif op == 4:
                klen = int(rng.choice([1, 3, 5]))
                x = conv1d_depthwise(ctx, x, rng.standard_normal(klen))
                expected += m * k * klen
            else:
                n = int(rng.integers(1, 5))
                x = linear(ctx, x, rng.standard_normal((k, n)), rng.standard_normal(n))
                expected += m * k * n
        assert ctx.mac_count == expected, case
        assert np.all(np.isfinite(x))


def test_matmul_associativity(rng):
    for _ in range(20):
        a, b, c = (rng.standard_normal((8, 8)) for _ in range(3))
        left = matmul(None, matmul(None, a, b), c)
        right = matmul(None, a, matmul(None, b, c))
        assert np.abs(left - right).max() <= 1e-9 * np.abs(left).max()
