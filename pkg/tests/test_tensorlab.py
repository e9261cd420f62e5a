"""Forward and gradient tests for the tensor substrate."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otpose.tensorlab import (
    ConfigError, DimensionError, NonFiniteError, Parameter, Tensor,
    finite_diff_check, ops, track_allocations,
)


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def rand(rng, *shape):
    return leaf(rng.standard_normal(shape))


class TestTensorBasics:
    def test_shape_data_invariant(self):
        t = Tensor(np.zeros((2, 3, 4)))
        assert t.shape == (2, 3, 4)
        assert t.data.size == int(np.prod(t.shape))

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.array([1.0, np.nan]))
        with pytest.raises(NonFiniteError):
            Tensor(np.array([np.inf]))

    def test_parameter_grad_shape_and_zero(self):
        p = Parameter(np.ones((3, 2)), "w")
        assert p.grad.shape == p.value.shape
        p.grad += 1.0
        p.zero_grad()
        assert np.all(p.grad == 0.0)

    def test_backward_accumulates_into_parameter(self):
        p = Parameter(np.array([2.0, 3.0]), "w")
        t = p.tensor()
        (t * t).sum().backward()
        np.testing.assert_allclose(p.grad, [4.0, 6.0])

    def test_constant_folding_keeps_graph_empty(self):
        a = Tensor(np.ones((2, 2)))
        b = Tensor(np.ones((2, 2)))
        out = ops.add(a, b)
        assert out.parents == () and not out.requires_grad


class TestMatmul:
    def test_identity(self):
        eye = leaf(np.eye(2))
        m = leaf([[2.0, 3.0], [4.0, 5.0]])
        np.testing.assert_array_equal(ops.matmul(eye, m).data,
                                      [[2.0, 3.0], [4.0, 5.0]])

    def test_hand_arithmetic(self):
        a = leaf([[1.0, 2.0]])
        b = leaf([[3.0], [4.0]])
        np.testing.assert_array_equal(ops.matmul(a, b).data, [[11.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))

    def test_gradcheck(self):
        rng = np.random.default_rng(0)
        err = finite_diff_check(ops.matmul, [rand(rng, 3, 4), rand(rng, 4, 2)])
        assert err < 1e-6

    def test_broadcast_batched_gradcheck(self):
        rng = np.random.default_rng(1)
        w = rand(rng, 2, 3)
        x = rand(rng, 4, 3, 5)
        err = finite_diff_check(ops.matmul, [w, x])
        assert err < 1e-6

    def test_linear_op_error_near_roundoff(self):
        rng = np.random.default_rng(2)
        err = finite_diff_check(ops.matmul, [rand(rng, 2, 2), rand(rng, 2, 2)])
        assert err < 1e-9


class TestSoftmax:
    def test_uniform_row(self):
        y = ops.softmax_rows(leaf([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(y.data, [[1 / 3] * 3])

    def test_large_logit_stable(self):
        y = ops.softmax_rows(leaf([[1000.0, 0.0]]))
        assert np.isfinite(y.data).all()
        np.testing.assert_allclose(y.data[0, 0], 1.0)
        assert y.data[0, 1] < 1e-300 or y.data[0, 1] == 0.0

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_rows_sum_to_one_and_open_interval(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((4, 6)) * 5.0
        y = ops.softmax_rows(leaf(x)).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)
        assert (y > 0.0).all() and (y < 1.0).all()

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        # compose with a weighting so the gradient is not identically zero
        w = rng.standard_normal((3, 5))
        err = finite_diff_check(
            lambda x: ops.weighted_sum(ops.softmax_rows(x), w),
            [rand(rng, 3, 5)])
        assert err < 1e-6


class TestLayernorm:
    def test_constant_vector_gives_zero_core(self):
        x = leaf(np.full((4,), 7.0))
        y = ops.layernorm(x, leaf(np.ones(4)), leaf(np.zeros(4)))
        np.testing.assert_allclose(y.data, 0.0, atol=1e-12)

    def test_output_mean_near_zero(self):
        rng = np.random.default_rng(4)
        x = leaf(rng.standard_normal((5, 32)))
        y = ops.layernorm(x, leaf(np.ones(32)), leaf(np.zeros(32)))
        assert np.abs(y.data.mean(axis=-1)).max() < 1e-7

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            ops.layernorm(leaf(np.ones((2, 8))), leaf(np.ones(4)), leaf(np.zeros(4)))

    def test_gradcheck(self):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((3, 6))
        err = finite_diff_check(
            lambda x, g, b: ops.weighted_sum(ops.layernorm(x, g, b), w),
            [rand(rng, 3, 6), rand(rng, 6), rand(rng, 6)])
        assert err < 1e-5


class TestActivations:
    def test_gelu_zero(self):
        assert ops.gelu(leaf(0.0)).item() == 0.0

    def test_gelu_asymptote(self):
        assert abs(ops.gelu(leaf(10.0)).item() - 10.0) < 1e-4
        assert abs(ops.gelu(leaf(-10.0)).item()) < 1e-4

    def test_gelu_gradcheck(self):
        rng = np.random.default_rng(6)
        err = finite_diff_check(ops.gelu, [rand(rng, 4, 7)])
        assert err < 1e-5

    def test_sigmoid_values_and_grad(self):
        assert ops.sigmoid(leaf(0.0)).item() == pytest.approx(0.5)
        rng = np.random.default_rng(7)
        err = finite_diff_check(ops.sigmoid, [rand(rng, 3, 3)])
        assert err < 1e-6


class TestConv2d:
    def test_identity_1x1(self):
        rng = np.random.default_rng(8)
        x = leaf(rng.random((2, 5, 4)))
        w = leaf(np.eye(2).reshape(2, 2, 1, 1))
        np.testing.assert_allclose(ops.conv2d(x, w).data, x.data, atol=0)

    def test_impulse_to_plateau(self):
        x = np.zeros((1, 7, 7))
        x[0, 3, 3] = 1.0
        w = leaf(np.ones((1, 1, 3, 3)))
        y = ops.conv2d(leaf(x), w).data[0]
        expected = np.zeros((7, 7))
        expected[2:5, 2:5] = 1.0
        np.testing.assert_array_equal(y, expected)

    def test_dilated_preserves_shape(self):
        rng = np.random.default_rng(9)
        x = leaf(rng.random((3, 10, 8)))
        w = leaf(rng.standard_normal((4, 3, 3, 3)) * 0.1)
        for d in (1, 2, 3, 5):
            assert ops.conv2d(x, w, dilation=d).shape == (4, 10, 8)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            ops.conv2d(leaf(np.ones((1, 4, 4))), leaf(np.ones((1, 1, 2, 2))))

    def test_wrong_padding_rejected(self):
        with pytest.raises(ConfigError):
            ops.conv2d(leaf(np.ones((1, 4, 4))), leaf(np.ones((1, 1, 3, 3))),
                       dilation=2, padding=1)

    def test_gradcheck(self):
        rng = np.random.default_rng(10)
        w_out = rng.standard_normal((2, 6, 5))
        err = finite_diff_check(
            lambda x, w: ops.weighted_sum(ops.conv2d(x, w, dilation=2), w_out),
            [rand(rng, 3, 6, 5), leaf(rng.standard_normal((2, 3, 3, 3)) * 0.3)])
        assert err < 1e-5

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(11)
        x = rng.random((4, 3, 6, 5))
        w = leaf(rng.standard_normal((2, 3, 3, 3)))
        batched = ops.conv2d(leaf(x), w).data
        for b in range(4):
            single = ops.conv2d(leaf(x[b]), w).data
            np.testing.assert_allclose(batched[b], single, atol=1e-12)


class TestBilinearSample:
    def test_integer_coordinates_exact(self):
        rng = np.random.default_rng(12)
        x = leaf(rng.random((2, 4, 5)))
        assert ops.bilinear_sample(x, 3, 2, c=1).item() == pytest.approx(
            float(x.data[1, 2, 3]), abs=0)

    def test_midpoint_of_checker_patch(self):
        x = leaf(np.array([[[0.0, 1.0], [1.0, 0.0]]]))
        assert ops.bilinear_sample(x, 0.5, 0.5, c=0).item() == pytest.approx(0.5)

    def test_out_of_bounds_is_zero(self):
        x = leaf(np.ones((1, 3, 3)))
        assert ops.bilinear_sample(x, -5.0, 1.0, c=0).item() == 0.0

    def test_coordinate_gradcheck(self):
        rng = np.random.default_rng(13)
        x = leaf(rng.random((1, 6, 6)))
        err = finite_diff_check(
            lambda px, py: ops.bilinear_sample(x, px, py, c=0),
            [leaf(2.3), leaf(3.6)], h=1e-6)
        assert err < 1e-4

    def test_image_gradcheck(self):
        rng = np.random.default_rng(14)
        err = finite_diff_check(
            lambda x: ops.bilinear_sample(x, 1.25, 2.75, c=0),
            [rand(rng, 1, 5, 5)])
        assert err < 1e-6


class TestChannelMaxNorm:
    def test_normalizes_peak_to_one(self):
        rng = np.random.default_rng(15)
        x = rng.random((3, 4, 4)) + 0.5
        y = ops.channel_max_norm(leaf(x)).data
        np.testing.assert_allclose(y.max(axis=(-2, -1)), 1.0)

    def test_empty_channel_stays_zero(self):
        y = ops.channel_max_norm(leaf(np.zeros((2, 3, 3)))).data
        np.testing.assert_array_equal(y, 0.0)

    def test_gradcheck_away_from_ties(self):
        rng = np.random.default_rng(16)
        x = rng.random((2, 3, 3))
        x[0, 1, 1] += 2.0  # make the argmax unambiguous
        x[1, 0, 2] += 2.0
        w = rng.standard_normal((2, 3, 3))
        err = finite_diff_check(
            lambda t: ops.weighted_sum(ops.channel_max_norm(t), w), [leaf(x)])
        assert err < 1e-6


class TestMiscOps:
    def test_reshape_transpose_concat_roundtrip(self):
        rng = np.random.default_rng(17)
        x = rand(rng, 2, 3, 4)
        assert ops.reshape(x, (6, 4)).shape == (6, 4)
        assert ops.transpose(x).shape == (2, 4, 3)
        y = ops.concat([x, x], axis=1)
        assert y.shape == (2, 6, 4)
        err = finite_diff_check(
            lambda a, b: ops.concat([a, ops.transpose(b)], axis=-1),
            [rand(rng, 3, 4), rand(rng, 4, 3)])
        assert err < 1e-9

    def test_scale_bias_rows_gradcheck(self):
        rng = np.random.default_rng(18)
        w = rng.standard_normal((2, 3, 5))
        err = finite_diff_check(
            lambda x, s, b: ops.weighted_sum(
                ops.bias_rows(ops.scale_rows(x, s), b), w),
            [rand(rng, 2, 3, 5), rand(rng, 3), rand(rng, 3)])
        assert err < 1e-6

    def test_weighted_sum_matches_numpy(self):
        rng = np.random.default_rng(19)
        x = rng.random((3, 4))
        w = rng.random((3, 4))
        assert ops.weighted_sum(leaf(x), w).item() == pytest.approx((x * w).sum())

    def test_mul_and_sub_gradcheck(self):
        rng = np.random.default_rng(20)
        err = finite_diff_check(
            lambda a, b: ops.mul(a, ops.sub(a, b)).sum(),
            [rand(rng, 3, 3), rand(rng, 3, 3)])
        assert err < 1e-6


class TestAllocationTracker:
    def test_tracks_tagged_entries_and_peak(self):
        with track_allocations() as tr:
            a = Tensor(np.zeros((10, 10)), tag="attn")
            assert tr.max_tagged_entries("attn") == 100
            assert tr.live_bytes >= a.data.nbytes
        assert not tr.active

    def test_live_bytes_drop_after_free(self):
        with track_allocations() as tr:
            t = Tensor(np.zeros((50, 50)))
            peak = tr.peak_live_bytes
            del t
            assert tr.live_bytes < peak


class TestFiniteDiffCheck:
    def test_rejects_float32(self):
        from otpose.tensorlab import GradCheckError
        with pytest.raises(GradCheckError):
            finite_diff_check(lambda x: x.sum(),
                              [Tensor(np.ones(3, dtype=np.float32),
                                      requires_grad=True)])

    def test_detects_wrong_backward(self):
        def broken(x):
            # forward of softmax with a sign-flipped backward
            d = x.data
            e = np.exp(d - d.max(axis=-1, keepdims=True))
            y = e / e.sum(axis=-1, keepdims=True)

            def bwd(g):
                dot = (g * y).sum(axis=-1, keepdims=True)
                return (-(y * (g - dot)),)

            return Tensor.from_op(y, (x,), bwd)

        rng = np.random.default_rng(21)
        w = rng.standard_normal((2, 4))
        err = finite_diff_check(lambda x: ops.weighted_sum(broken(x), w),
                                [rand(rng, 2, 4)])
        assert err > 1e-3
