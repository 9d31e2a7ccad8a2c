"""Forward semantics of the tensor ops, checked against hand values and
independent float64 oracles (scipy / naive loops)."""

import numpy as np
import pytest
import scipy.ndimage
import scipy.signal

from depthcast.core import tensor as T
from depthcast.core.tensor import Tensor

from helpers import assert_close


def t(data, grad=False):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=grad)


class TestElementwise:
    def test_add(self):
        out = t([1.0, 2.0]) + t([3.0, 4.0])
        assert np.array_equal(out.data, [4.0, 6.0])

    def test_minimum(self):
        out = T.minimum(t([0.5, 0.2]), t([0.3, 0.4]))
        assert np.allclose(out.data, [0.3, 0.2])

    def test_minimum_bounds_inputs(self):
        rng = np.random.default_rng(0)
        a, b = rng.random((2, 4, 5)).astype(np.float32)
        out = T.minimum(t(a), t(b))
        assert np.all(out.data <= a) and np.all(out.data <= b)

    def test_div_by_zero_raises(self):
        with pytest.raises(ZeroDivisionError):
            t([1.0]) / t([0.0])

    def test_log_nonpositive_raises(self):
        with pytest.raises(ValueError, match="log"):
            T.log(t([1.0, 0.0]))

    def test_nonfinite_result_raises(self):
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            T.exp(t([100.0]))  # overflows float32

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="broadcast"):
            t(np.zeros((2, 3))) + t(np.zeros((4,)))

    def test_broadcast_equals_materialized(self):
        rng = np.random.default_rng(1)
        a = rng.random((1, 4)).astype(np.float32)
        b = rng.random((3, 4)).astype(np.float32)
        lazy = (t(a) * t(b)).data
        eager = (t(np.broadcast_to(a, (3, 4)).copy()) * t(b)).data
        assert np.array_equal(lazy, eager)

    def test_clamp(self):
        out = T.clamp(t([-1.0, 0.5, 2.0]), 0.0, 1.0)
        assert np.array_equal(out.data, [0.0, 0.5, 1.0])

    def test_where_routes_by_condition(self):
        cond = np.array([True, False])
        out = T.where(cond, t([1.0, 1.0]), t([5.0, 5.0]))
        assert np.array_equal(out.data, [1.0, 5.0])


class TestReductionsAndShapes:
    def test_sum_axis(self):
        x = t(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert np.array_equal(x.sum(axis=0).data, [3.0, 5.0, 7.0])
        assert np.array_equal(x.sum().data, 15.0)

    def test_mean_keepdims(self):
        x = t(np.ones((2, 4)))
        out = x.mean(axis=1, keepdims=True)
        assert out.shape == (2, 1)

    def test_reshape_transpose_roundtrip(self):
        x = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        out = T.transpose(t(x), (2, 0, 1))
        assert out.shape == (4, 2, 3)
        assert np.array_equal(out.data, x.transpose(2, 0, 1))

    def test_concat_and_getitem(self):
        a, b = t(np.ones((2, 2))), t(np.zeros((2, 3)))
        cat = T.concat([a, b], axis=1)
        assert cat.shape == (2, 5)
        assert np.array_equal(cat[:, 2:].data, np.zeros((2, 3)))

    def test_roll(self):
        x = t(np.arange(4, dtype=np.float32).reshape(1, 4))
        assert np.array_equal(T.roll(x, 1, 1).data, [[3.0, 0.0, 1.0, 2.0]])


class TestMatmul:
    def test_identity(self):
        a = t([[1.0, 2.0], [3.0, 4.0]])
        out = a @ t(np.eye(2))
        assert np.array_equal(out.data, a.data)

    def test_column_vector(self):
        out = t(np.eye(2)) @ t([[5.0], [6.0]])
        assert np.array_equal(out.data, [[5.0], [6.0]])

    def test_inner_dim_mismatch(self):
        with pytest.raises(ValueError, match="inner dims"):
            t(np.zeros((2, 3))) @ t(np.zeros((4, 2)))

    def test_sum_grad_wrt_a_is_column_sums_of_b(self):
        rng = np.random.default_rng(2)
        a = rng.random((3, 4)).astype(np.float32)
        b = rng.random((4, 5)).astype(np.float32)
        ta = t(a, grad=True)
        (ta @ t(b)).sum().backward()
        expected = np.broadcast_to(b.sum(axis=1), (3, 4))
        assert_close(ta.grad, expected, rtol=1e-5, atol=1e-6, label="matmul grad")


class TestConv:
    def test_one_by_one_identity(self):
        rng = np.random.default_rng(3)
        x = rng.random((1, 3, 5, 5)).astype(np.float32)
        w = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
        out = T.conv2d(t(x), t(w))
        assert np.allclose(out.data, x, atol=1e-6)

    def test_ones_kernel_interior_count(self):
        x = np.ones((1, 1, 5, 5), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        out = T.conv2d(t(x), t(w), padding=1)
        assert out.data[0, 0, 2, 2] == 9.0
        assert out.data[0, 0, 0, 0] == 4.0  # corner sees a 2x2 neighborhood

    def test_matches_scipy_correlate(self):
        rng = np.random.default_rng(4)
        x = rng.random((2, 3, 7, 7)).astype(np.float32)
        w = rng.random((4, 3, 3, 3)).astype(np.float32)
        out = T.conv2d(t(x), t(w), stride=2, padding=1).data
        xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.stack([
            np.stack([
                sum(scipy.signal.correlate(xp[b, c], w[o, c].astype(np.float64), mode="valid")
                    for c in range(3))[::2, ::2]
                for o in range(4)])
            for b in range(2)])
        assert_close(out, ref, rtol=1e-4, atol=1e-5, label="conv2d vs scipy")

    def test_non_integral_output_raises(self):
        with pytest.raises(ValueError, match="non-integral"):
            T.conv2d(t(np.zeros((1, 1, 5, 5))), t(np.zeros((1, 1, 2, 2))), stride=2)

    def test_transpose_identity_1x1(self):
        rng = np.random.default_rng(5)
        x = rng.random((1, 2, 4, 4)).astype(np.float32)
        w = np.eye(2, dtype=np.float32).reshape(2, 2, 1, 1)
        out = T.conv_transpose2d(t(x), t(w))
        assert np.allclose(out.data, x, atol=1e-6)

    def test_transpose_output_shape(self):
        out = T.conv_transpose2d(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 3, 3))),
                                 stride=2, padding=1)
        assert out.shape == (1, 1, 3, 3)

    def test_transpose_is_conv_adjoint(self):
        # <conv(x, w), y> == <x, conv_T(y, w)> for matching geometries
        rng = np.random.default_rng(6)
        x = rng.random((2, 3, 7, 9)).astype(np.float32)
        w = rng.random((4, 3, 3, 3)).astype(np.float32)
        y = rng.random((2, 4, 4, 5)).astype(np.float32)
        cx = T.conv2d(t(x), t(w), stride=2, padding=1).data
        cty = T.conv_transpose2d(t(y), t(np.transpose(w, (0, 1, 2, 3))), stride=2, padding=1).data
        lhs = float((cx.astype(np.float64) * y).sum())
        rhs = float((x.astype(np.float64) * cty).sum())
        assert_close(lhs, rhs, rtol=1e-5, atol=1e-6, label="adjoint identity")


class TestGridSample:
    def test_identity_grid_exact(self):
        rng = np.random.default_rng(7)
        x = rng.random((2, 3, 6, 8)).astype(np.float32)
        grid = np.broadcast_to(T.identity_grid(6, 8), (2, 6, 8, 2)).copy()
        out = T.grid_sample(t(x), t(grid))
        assert np.array_equal(out.data, x)

    def test_all_samples_at_origin(self):
        rng = np.random.default_rng(8)
        x = rng.random((1, 3, 5, 5)).astype(np.float32)
        grid = np.full((1, 4, 4, 2), -1.0, dtype=np.float32)  # clamps to pixel (0, 0)
        out = T.grid_sample(t(x), t(grid))
        for c in range(3):
            assert np.allclose(out.data[0, c], x[0, c, 0, 0])

    def test_matches_naive_bilinear(self):
        rng = np.random.default_rng(9)
        x = rng.random((1, 2, 6, 7)).astype(np.float32)
        grid = rng.uniform(-1.2, 1.2, (1, 5, 4, 2)).astype(np.float32)
        out = T.grid_sample(t(x), t(grid)).data

        def naive(c, gy, gx):
            u = np.clip(((gx + 1) * 7 - 1) / 2, 0, 6)
            v = np.clip(((gy + 1) * 6 - 1) / 2, 0, 5)
            u0, v0 = int(np.floor(u)), int(np.floor(v))
            u1, v1 = min(u0 + 1, 6), min(v0 + 1, 5)
            fu, fv = u - u0, v - v0
            patch = x[0, c].astype(np.float64)
            return ((1 - fu) * (1 - fv) * patch[v0, u0] + fu * (1 - fv) * patch[v0, u1]
                    + (1 - fu) * fv * patch[v1, u0] + fu * fv * patch[v1, u1])

        ref = np.array([[[naive(c, *grid[0, i, j, ::-1]) for j in range(4)]
                         for i in range(5)] for c in range(2)])
        assert_close(out[0], ref, rtol=1e-4, atol=1e-5, label="grid_sample vs naive")

    def test_grid_last_dim_checked(self):
        with pytest.raises(ValueError, match="last dim"):
            T.grid_sample(t(np.zeros((1, 1, 4, 4))), t(np.zeros((1, 4, 4, 3))))

    def test_constant_input_constant_output(self):
        grid = np.random.default_rng(10).uniform(-1, 1, (1, 3, 3, 2)).astype(np.float32)
        out = T.grid_sample(t(np.full((1, 2, 5, 5), 0.7)), t(grid))
        assert np.allclose(out.data, 0.7, atol=1e-6)


class TestNormalizationSuite:
    def test_softmax_uniform(self):
        out = T.softmax(t([0.0, 0.0, 0.0]), axis=-1)
        assert np.allclose(out.data, 1.0 / 3.0)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 9)).astype(np.float32) * 5
        out = T.softmax(t(x), axis=-1)
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_layer_norm_constant_rows_zero(self):
        x = np.full((3, 8), 2.5, dtype=np.float32)
        out = T.layer_norm(t(x), t(np.ones(8)), t(np.zeros(8)))
        assert np.allclose(out.data, 0.0, atol=1e-6)

    def test_layer_norm_standardizes(self):
        rng = np.random.default_rng(12)
        x = rng.normal(2.0, 3.0, (5, 16)).astype(np.float32)
        out = T.layer_norm(t(x), t(np.ones(16)), t(np.zeros(16))).data
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-5)
        assert np.allclose(out.var(axis=-1), 1.0, atol=1e-3)

    def test_avg_pool_constant_map(self):
        out = T.avg_pool2d(t(np.full((1, 2, 6, 5), 3.25)))
        assert np.allclose(out.data, 3.25, atol=1e-6)

    def test_avg_pool_matches_uniform_filter(self):
        rng = np.random.default_rng(13)
        x = rng.random((2, 3, 9, 7)).astype(np.float32)
        out = T.avg_pool2d(t(x)).data
        ref = np.stack([[scipy.ndimage.uniform_filter(x[b, c].astype(np.float64), 3,
                                                      mode="nearest")
                         for c in range(3)] for b in range(2)])
        assert_close(out, ref, rtol=1e-5, atol=1e-6, label="avg_pool vs scipy")


class TestDeterminism:
    def test_forward_and_grad_bitwise_reproducible(self):
        def run():
            rng = np.random.default_rng(42)
            x = Tensor(rng.random((2, 3, 8, 8)).astype(np.float32), requires_grad=True)
            w = Tensor(rng.normal(size=(4, 3, 3, 3)).astype(np.float32), requires_grad=True)
            out = T.conv2d(x, w, padding=1).relu().mean()
            out.backward()
            return out.data.copy(), x.grad.copy(), w.grad.copy()

        a = run()
        b = run()
        for xa, xb in zip(a, b):
            assert np.array_equal(xa, xb)
