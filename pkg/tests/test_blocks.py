"""Building blocks: conv-BN-act, residual stages, the FPN decoder and the
prediction head."""

from __future__ import annotations

import numpy as np
import pytest

from salfuse.blocks import (EncoderConfig, cbr, encoder_forward, encoder_stage,
                            fpn_decode, init_cbr, init_encoder, init_fpn,
                            init_head, init_residual_block, prediction_head,
                            residual_block)
from salfuse.errors import GeometryError, ShapeError
from salfuse.params import ParamStore
from salfuse.tensor import Tensor, batchnorm2d, conv2d


def _store_with_cbr(name="blk", cin=3, cout=4, kernel=3, seed=0):
    store = ParamStore()
    init_cbr(store, name, cin, cout, kernel, np.random.default_rng(seed))
    return store


def test_cbr_preserves_size_for_any_odd_kernel_dilation(rng):
    x = Tensor(rng.random((1, 3, 12, 12)).astype(np.float32))
    for kernel, dilation in [(1, 1), (3, 1), (3, 7), (5, 3)]:
        store = _store_with_cbr(kernel=kernel)
        y = cbr(x, store, "blk", kernel=kernel, dilation=dilation)
        assert y.dims == (1, 4, 12, 12)


def test_cbr_rejects_even_kernel_and_unknown_act(rng):
    x = Tensor(rng.random((1, 3, 8, 8)).astype(np.float32))
    with pytest.raises(ValueError):
        cbr(x, _store_with_cbr(kernel=4), "blk", kernel=4)
    with pytest.raises(ValueError):
        cbr(x, _store_with_cbr(), "blk", act="gelu")


def test_cbr_relu_equals_clipped_linear_output(rng):
    x = Tensor(rng.standard_normal((2, 3, 8, 8)).astype(np.float32))
    store = _store_with_cbr()
    pre = cbr(x, store, "blk", act="none").data
    post = cbr(x, store, "blk", act="relu").data
    np.testing.assert_array_equal(post, np.maximum(pre, 0.0))


def test_cbr_sigmoid_output_in_unit_interval(rng):
    x = Tensor(rng.standard_normal((1, 3, 8, 8)).astype(np.float32))
    y = cbr(x, _store_with_cbr(), "blk", act="sigmoid").data
    assert np.all((y > 0.0) & (y < 1.0))


# ---------------------------------------------------------------------------
# residual blocks / encoder


def test_zeroed_branch_leaves_projection_shortcut(rng):
    store = ParamStore()
    init_residual_block(store, "rb", 3, 8, np.random.default_rng(0),
                        projection=True)
    store["rb.conv2.bn.gamma"].data[:] = 0.0  # branch output becomes zero
    x = Tensor(rng.standard_normal((1, 3, 8, 8)).astype(np.float32))
    got = residual_block(x, store, "rb", stride=2).data
    short = conv2d(x, store["rb.proj.conv.w"], stride=2)
    short = batchnorm2d(short, store["rb.proj.bn.gamma"], store["rb.proj.bn.beta"],
                        store["rb.proj.bn.running_mean"],
                        store["rb.proj.bn.running_var"], training=False)
    np.testing.assert_array_equal(got, short.data)


def test_identity_block_without_projection_needs_matching_shapes(rng):
    store = ParamStore()
    init_residual_block(store, "rb", 4, 4, np.random.default_rng(0),
                        projection=False)
    x = Tensor(rng.standard_normal((1, 4, 6, 6)).astype(np.float32))
    assert residual_block(x, store, "rb").dims == (1, 4, 6, 6)
    with pytest.raises(ShapeError):
        residual_block(x, store, "rb", stride=2)


def test_encoder_side_outputs_have_documented_strides_and_channels(rng):
    cfg = EncoderConfig()
    store = ParamStore()
    init_encoder(store, "enc", cfg, np.random.default_rng(0))
    x = Tensor(rng.random((1, 3, 64, 64)).astype(np.float32))
    sides = encoder_forward(x, store, "enc", cfg)
    assert set(sides) == {1, 2, 3, 4, 5}
    for stage, (c, hw) in enumerate(
            [(8, 32), (16, 16), (32, 8), (64, 4), (64, 2)], start=1):
        assert sides[stage].dims == (1, c, hw, hw)


def test_encoder_with_skipped_early_stages(rng):
    cfg = EncoderConfig(input_channels=16, skip_stages=frozenset({1, 2}))
    assert cfg.stages == [3, 4, 5]
    assert cfg.stage_in_channels(3) == 16
    store = ParamStore()
    init_encoder(store, "enc", cfg, np.random.default_rng(0))
    x = Tensor(rng.random((1, 16, 16, 16)).astype(np.float32))
    sides = encoder_forward(x, store, "enc", cfg)
    assert set(sides) == {3, 4, 5}
    assert sides[3].dims == (1, 32, 8, 8)
    assert sides[5].dims == (1, 64, 2, 2)


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(stage_channels=(8, 16, 32, 64))
    with pytest.raises(ValueError):
        EncoderConfig(skip_stages=frozenset({3}))
    with pytest.raises(ValueError):
        EncoderConfig(stage_channels=(0, 16, 32, 64, 64))


def test_encoder_geometry_errors(rng):
    cfg = EncoderConfig()
    store = ParamStore()
    init_encoder(store, "enc", cfg, np.random.default_rng(0))
    with pytest.raises(GeometryError):
        encoder_forward(Tensor(rng.random((1, 3, 48, 64)).astype(np.float32)),
                        store, "enc", cfg)
    with pytest.raises(ShapeError):
        encoder_forward(Tensor(rng.random((1, 4, 64, 64)).astype(np.float32)),
                        store, "enc", cfg)
    with pytest.raises(GeometryError):
        encoder_stage(Tensor(rng.random((1, 3, 7, 8)).astype(np.float32)),
                      store, "enc", 1, cfg)


# ---------------------------------------------------------------------------
# FPN decoder


def _fpn_setup(rng, batch=1):
    side_channels = {2: 16, 3: 32, 4: 64, 5: 64}
    store = ParamStore()
    init_fpn(store, "fpn", side_channels, np.random.default_rng(0))
    sides = {2: Tensor(rng.random((batch, 16, 16, 16)).astype(np.float32)),
             3: Tensor(rng.random((batch, 32, 8, 8)).astype(np.float32)),
             4: Tensor(rng.random((batch, 64, 4, 4)).astype(np.float32)),
             5: Tensor(rng.random((batch, 64, 2, 2)).astype(np.float32))}
    return store, sides


def test_fpn_output_resolutions(rng):
    store, sides = _fpn_setup(rng)
    f4, f3, f = fpn_decode(sides, store, "fpn")
    assert f4.dims == (1, 64, 4, 4)
    assert f3.dims == (1, 64, 8, 8)
    assert f.dims == (1, 64, 16, 16)


def test_fpn_with_silenced_deep_laterals_reduces_to_shallowest_path(rng):
    store, sides = _fpn_setup(rng)
    for k in (3, 4, 5):
        store[f"fpn.lateral{k}.bn.gamma"].data[:] = 0.0
    f4, f3, f = fpn_decode(sides, store, "fpn")
    assert np.all(f4.data == 0.0) and np.all(f3.data == 0.0)
    lat2 = cbr(sides[2], store, "fpn.lateral2", kernel=1)
    want = cbr(lat2, store, "fpn.merge2")
    np.testing.assert_array_equal(f.data, want.data)


def test_fpn_requires_all_four_sides(rng):
    store, sides = _fpn_setup(rng)
    del sides[5]
    with pytest.raises(ShapeError):
        fpn_decode(sides, store, "fpn")


# ---------------------------------------------------------------------------
# prediction head


def test_head_zero_weights_give_half_everywhere(rng):
    store = ParamStore()
    init_head(store, "head", 64, np.random.default_rng(0))
    store["head.conv.w"].data[:] = 0.0
    x = Tensor(rng.random((2, 64, 16, 16)).astype(np.float32))
    y = prediction_head(x, store, "head", (64, 64))
    assert y.dims == (2, 1, 64, 64)
    np.testing.assert_array_equal(y.data, np.full((2, 1, 64, 64), 0.5,
                                                  dtype=np.float32))


def test_head_target_must_be_exactly_4x(rng):
    store = ParamStore()
    init_head(store, "head", 8, np.random.default_rng(0))
    x = Tensor(rng.random((1, 8, 16, 16)).astype(np.float32))
    with pytest.raises(GeometryError):
        prediction_head(x, store, "head", (60, 64))


def test_head_is_monotone_when_weights_are_nonnegative(rng):
    store = ParamStore()
    init_head(store, "head", 4, np.random.default_rng(0))
    store["head.conv.w"].data[:] = np.abs(store["head.conv.w"].data)
    x1 = rng.random((1, 4, 8, 8)).astype(np.float32)
    x2 = x1 + rng.random((1, 4, 8, 8)).astype(np.float32)
    y1 = prediction_head(Tensor(x1), store, "head", (32, 32)).data
    y2 = prediction_head(Tensor(x2), store, "head", (32, 32)).data
    assert np.all(y2 >= y1)
