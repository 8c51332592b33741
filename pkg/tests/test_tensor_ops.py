"""Forward semantics of the tensor ops against loop oracles and
hand-computed values."""

from __future__ import annotations

import numpy as np
import pytest

import _reference as ref
from salfuse.errors import GeometryError, ShapeError
from salfuse.tensor import (Tensor, activation, add, batchnorm2d, column,
                            concat_channels, conv2d, gap_channel, gap_spatial,
                            gmp_channel, interp_matrix, linear, mul, pool,
                            reshape, resize_bilinear, scale_rows,
                            scale_spatial, sigmoid, slice_channels, sum_all,
                            upsample_bilinear)

# ---------------------------------------------------------------------------
# Tensor basics


def test_tensor_rejects_rank_5():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))


def test_tensor_rejects_zero_sized_dims():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 0, 3)))


def test_tensor_promotes_ints_to_float32():
    t = Tensor(np.arange(4).reshape(2, 2))
    assert t.dtype == np.float32


def test_item_requires_scalar():
    assert Tensor(np.asarray(2.5)).item() == 2.5
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2,))).item()


# ---------------------------------------------------------------------------
# conv2d


def test_conv_box_sum_of_ones():
    x = Tensor(np.ones((1, 1, 3, 3)))
    k = Tensor(np.ones((1, 1, 3, 3)))
    y = conv2d(x, k, padding=1).data[0, 0]
    assert y[1, 1] == 9.0
    assert y[0, 0] == 4.0
    assert y[0, 1] == 6.0


def test_conv_dilation_3_keeps_5x5_size():
    x = Tensor(np.random.default_rng(0).random((1, 1, 5, 5)))
    k = Tensor(np.random.default_rng(1).random((1, 1, 3, 3)))
    y = conv2d(x, k, padding=3, dilation=3)
    assert y.dims == (1, 1, 5, 5)


@pytest.mark.parametrize("stride,padding,dilation,kernel", [
    (1, 1, 1, 3),
    (2, 1, 1, 3),
    (1, 3, 3, 3),
    (1, 0, 1, 1),
    (2, 2, 2, 3),
    (1, 5, 5, 3),
])
def test_conv_matches_six_loop_oracle_float64(stride, padding, dilation, kernel):
    rng = np.random.default_rng(stride * 100 + padding * 10 + dilation)
    x = rng.standard_normal((2, 3, 9, 7))
    w = rng.standard_normal((4, 3, kernel, kernel))
    b = rng.standard_normal(4)
    got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride,
                 padding=padding, dilation=dilation).data
    want = ref.conv2d_ref(x, w, b, stride=stride, padding=padding,
                          dilation=dilation)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_conv_matches_oracle_float32():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 2, 7, 7)).astype(np.float32)
    w = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
    got = conv2d(Tensor(x), Tensor(w), padding=1).data
    want = ref.conv2d_ref(x.astype(np.float64), w.astype(np.float64), padding=1)
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_conv_is_linear_in_input_without_bias():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    a = 1.7
    y1 = conv2d(Tensor(a * x), Tensor(w), padding=1).data
    y2 = a * conv2d(Tensor(x), Tensor(w), padding=1).data
    np.testing.assert_allclose(y1, y2, rtol=1e-6, atol=1e-12)


def test_conv_channel_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv_empty_output_is_geometry_error():
    with pytest.raises(GeometryError):
        conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


def test_conv_bias_length_checked():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((2, 1, 3, 3))),
               Tensor(np.zeros(3)), padding=1)


def test_conv_rejects_bad_geometry_arguments():
    x, k = Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3)))
    with pytest.raises(ValueError):
        conv2d(x, k, stride=0)
    with pytest.raises(ValueError):
        conv2d(x, k, dilation=0)


def test_conv_forward_is_deterministic():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    y1 = conv2d(Tensor(x), Tensor(w), padding=1).data
    y2 = conv2d(Tensor(x), Tensor(w), padding=1).data
    assert np.array_equal(y1, y2)


# ---------------------------------------------------------------------------
# batchnorm2d


def _bn_params(c, dtype=np.float64):
    return (Tensor(np.ones(c, dtype=dtype)), Tensor(np.zeros(c, dtype=dtype)),
            Tensor(np.zeros(c, dtype=dtype)), Tensor(np.ones(c, dtype=dtype)))


def test_batchnorm_train_matches_statistics_oracle():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 4, 4))
    gamma = rng.standard_normal(3)
    beta = rng.standard_normal(3)
    g, b, rm, rv = _bn_params(3)
    g.data[:], b.data[:] = gamma, beta
    got = batchnorm2d(Tensor(x), g, b, rm, rv, training=True).data
    want, means, variances = ref.batchnorm_train_ref(x, gamma, beta)
    np.testing.assert_allclose(got, want, atol=1e-12)
    # running buffers move toward the batch statistics with momentum 0.1
    np.testing.assert_allclose(rm.data, 0.1 * means, atol=1e-12)
    np.testing.assert_allclose(rv.data, 0.9 + 0.1 * variances, atol=1e-12)


def test_batchnorm_identity_on_normalized_input():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((4, 2, 8, 8))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) \
        / x.std(axis=(0, 2, 3), keepdims=True)
    y = batchnorm2d(Tensor(x), *_bn_params(2), training=True).data
    # eps=1e-5 in the variance shrinks everything by a relative ~eps/2
    np.testing.assert_allclose(y, x, rtol=1e-5, atol=1e-7)


def test_batchnorm_zero_gamma_returns_beta():
    g, b, rm, rv = _bn_params(3)
    g.data[:] = 0.0
    b.data[:] = [1.0, -2.0, 0.5]
    y = batchnorm2d(Tensor(np.random.default_rng(0).random((2, 3, 4, 4))),
                    g, b, rm, rv, training=True).data
    np.testing.assert_allclose(y, np.broadcast_to(
        np.array([1.0, -2.0, 0.5])[None, :, None, None], y.shape), atol=1e-12)


def test_batchnorm_eval_uses_running_stats():
    g, b, rm, rv = _bn_params(1)
    rm.data[:] = 2.0
    rv.data[:] = 4.0
    x = np.full((1, 1, 2, 2), 6.0)
    y = batchnorm2d(Tensor(x), g, b, rm, rv, training=False).data
    np.testing.assert_allclose(y, (6.0 - 2.0) / np.sqrt(4.0 + 1e-5), rtol=1e-12)
    # and eval mode must not move the buffers
    assert rm.data[0] == 2.0 and rv.data[0] == 4.0


def test_batchnorm_channel_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        batchnorm2d(Tensor(np.zeros((1, 3, 2, 2))), *_bn_params(2), training=True)


def test_batchnorm_training_rejects_single_value_per_channel():
    # one value per channel would normalize to exactly zero (variance 0)
    x = Tensor(np.random.default_rng(0).random((1, 3, 1, 1)))
    with pytest.raises(GeometryError):
        batchnorm2d(x, *_bn_params(3), training=True)
    # eval mode is well-defined at any extent
    y = batchnorm2d(x, *_bn_params(3), training=False)
    assert y.dims == (1, 3, 1, 1)


# ---------------------------------------------------------------------------
# activations


def test_activation_values():
    x = Tensor(np.array([[-2.5, 0.0, 3.0]]))
    assert activation(x, "relu").data.tolist() == [[0.0, 0.0, 3.0]]
    np.testing.assert_allclose(activation(x, "sigmoid").data[0, 1], 0.5)
    np.testing.assert_array_equal(activation(x, "none").data, x.data)
    with pytest.raises(ValueError):
        activation(x, "tanh")


def test_sigmoid_is_stable_and_strictly_inside_unit_interval():
    z = np.array([-1e6, -100.0, -30.0, 0.0, 30.0, 100.0, 1e6])
    s = sigmoid(Tensor(z)).data
    assert np.all(np.isfinite(s))
    assert np.all(s > 0.0) and np.all(s < 1.0)
    # against the plain exp form where it does not overflow
    moderate = np.linspace(-30, 30, 101)
    expected = 1.0 / (1.0 + np.exp(-moderate))
    np.testing.assert_allclose(sigmoid(Tensor(moderate)).data, expected,
                               rtol=1e-12)


# ---------------------------------------------------------------------------
# pooling


def test_pools_match_loop_oracle(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    gap_s, gap_c, gmp_c = ref.pools_ref(x)
    np.testing.assert_allclose(gap_spatial(Tensor(x)).data, gap_s, atol=1e-6)
    np.testing.assert_allclose(gap_channel(Tensor(x)).data, gap_c, atol=1e-6)
    np.testing.assert_allclose(gmp_channel(Tensor(x)).data, gmp_c, atol=1e-6)


def test_gap_spatial_of_constant_is_constant():
    y = gap_spatial(Tensor(np.full((1, 2, 5, 5), 3.25))).data
    np.testing.assert_array_equal(y, np.full((1, 2, 1, 1), 3.25))


def test_gmp_channel_picks_max():
    x = np.zeros((1, 3, 1, 1))
    x[0, :, 0, 0] = [1.0, 5.0, 3.0]
    assert gmp_channel(Tensor(x)).data[0, 0, 0, 0] == 5.0


def test_pool_rejects_unknown_kind():
    with pytest.raises(ValueError):
        pool(Tensor(np.zeros((1, 1, 2, 2))), "avg")


# ---------------------------------------------------------------------------
# bilinear resizing


def test_upsample_2x2_matches_hand_computed_weights():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None])
    want = np.array([
        [1.00, 1.25, 1.75, 2.00],
        [1.50, 1.75, 2.25, 2.50],
        [2.50, 2.75, 3.25, 3.50],
        [3.00, 3.25, 3.75, 4.00],
    ])
    np.testing.assert_allclose(upsample_bilinear(x, 2).data[0, 0], want,
                               atol=1e-6)


def test_upsample_factor_1_is_identity():
    x = np.random.default_rng(0).random((1, 2, 3, 3))
    np.testing.assert_array_equal(upsample_bilinear(Tensor(x), 1).data, x)


def test_upsample_preserves_constants():
    x = Tensor(np.full((1, 1, 3, 5), 0.7))
    y = upsample_bilinear(x, 4).data
    assert y.shape == (1, 1, 12, 20)
    np.testing.assert_allclose(y, 0.7, rtol=1e-12)


def test_upsample_rejects_bad_factor():
    x = Tensor(np.zeros((1, 1, 2, 2)))
    with pytest.raises(ValueError):
        upsample_bilinear(x, 0)


def test_interp_matrix_rows_are_stochastic():
    for n_in, n_out in [(2, 4), (5, 3), (7, 13), (4, 4)]:
        m = interp_matrix(n_in, n_out, np.float64)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(m >= 0)


def test_resize_matches_per_pixel_reference(rng):
    x = rng.random((2, 3, 5, 7))
    for out_hw in [(10, 14), (3, 4), (5, 7), (8, 5)]:
        got = resize_bilinear(Tensor(x), out_hw).data
        want = ref.bilinear_resize_ref(x, *out_hw)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_resize_rejects_empty_target():
    with pytest.raises(GeometryError):
        resize_bilinear(Tensor(np.zeros((1, 1, 4, 4))), (0, 4))


# ---------------------------------------------------------------------------
# structure ops


def test_concat_then_slice_roundtrips_bit_exactly(rng):
    a = Tensor(rng.random((2, 3, 4, 4)).astype(np.float32))
    b = Tensor(rng.random((2, 5, 4, 4)).astype(np.float32))
    cat = concat_channels([a, b])
    assert cat.dims == (2, 8, 4, 4)
    assert np.array_equal(slice_channels(cat, 0, 3).data, a.data)
    assert np.array_equal(slice_channels(cat, 3, 8).data, b.data)


def test_concat_of_one_tensor_is_identity(rng):
    a = Tensor(rng.random((1, 2, 3, 3)))
    assert np.array_equal(concat_channels([a]).data, a.data)


def test_concat_validates_inputs(rng):
    a = Tensor(rng.random((1, 2, 3, 3)))
    with pytest.raises(ValueError):
        concat_channels([])
    with pytest.raises(ShapeError):
        concat_channels([a, Tensor(rng.random((1, 2, 4, 3)))])


def test_slice_channels_range_checked():
    x = Tensor(np.zeros((1, 4, 2, 2)))
    with pytest.raises(ShapeError):
        slice_channels(x, 2, 2)
    with pytest.raises(ShapeError):
        slice_channels(x, 0, 5)


def test_linear_matches_dot_oracle(rng):
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((2, 5))
    b = rng.standard_normal(2)
    got = linear(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(got, ref.linear_ref(x, w, b), atol=1e-12)
    flat = rng.standard_normal(5)
    got1 = linear(Tensor(flat), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(got1, ref.linear_ref(flat, w, b), atol=1e-12)


def test_linear_identity():
    x = np.array([1.0, 2.0, 3.0])
    y = linear(Tensor(x), Tensor(np.eye(3))).data
    np.testing.assert_array_equal(y, x)


def test_linear_shape_errors(rng):
    with pytest.raises(ShapeError):
        linear(Tensor(rng.random(4)), Tensor(rng.random((2, 5))))
    with pytest.raises(ShapeError):
        linear(Tensor(rng.random(5)), Tensor(rng.random((2, 5))),
               Tensor(rng.random(3)))


def test_elementwise_and_scaling_ops(rng):
    x = rng.random((2, 3, 2, 2))
    y = rng.random((2, 3, 2, 2))
    np.testing.assert_allclose(add(Tensor(x), Tensor(y)).data, x + y)
    np.testing.assert_allclose(mul(Tensor(x), Tensor(y)).data, x * y)
    s = np.array([2.0, 0.5])
    np.testing.assert_allclose(scale_rows(Tensor(x), Tensor(s)).data,
                               x * s[:, None, None, None])
    att = rng.random((2, 1, 2, 2))
    np.testing.assert_allclose(scale_spatial(Tensor(x), Tensor(att)).data,
                               x * att)
    m = rng.random((3, 4))
    np.testing.assert_array_equal(column(Tensor(m), 2).data, m[:, 2])
    with pytest.raises(ShapeError):
        add(Tensor(x), Tensor(rng.random((2, 3, 2, 3))))
    with pytest.raises(ShapeError):
        scale_rows(Tensor(x), Tensor(np.ones(3)))
    with pytest.raises(ShapeError):
        scale_spatial(Tensor(x), Tensor(rng.random((2, 2, 2, 2))))
    with pytest.raises(ShapeError):
        column(Tensor(m), 4)


def test_reshape_and_sum(rng):
    x = rng.random((2, 6))
    r = reshape(Tensor(x), (3, 4))
    assert r.dims == (3, 4)
    np.testing.assert_array_equal(r.data, x.reshape(3, 4))
    with pytest.raises(ShapeError):
        reshape(Tensor(x), (5, 5))
    np.testing.assert_allclose(sum_all(Tensor(x)).item(), x.sum())
