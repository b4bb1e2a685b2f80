"""Encoder tests: shapes, attention behavior, fusion locality."""

import numpy as np
import pytest

from protoscale.encoder import (
    EncoderConfig,
    PyramidEncoder,
    SelfAttentionBlock,
)
from protoscale.errors import ConfigError, ShapeError
from protoscale.tensor import Tensor

from conftest import check_gradients


def small_encoder(rng, size=32):
    cfg = EncoderConfig(input_size=size, channels=(4, 6, 8), dim=8, attention_heads=2)
    return PyramidEncoder(cfg, rng)


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(input_size=60)
    with pytest.raises(ConfigError):
        EncoderConfig(dim=30, attention_heads=4)
    with pytest.raises(ConfigError):
        EncoderConfig(channels=(32, 64))


def test_backbone_strides(rng):
    enc = small_encoder(rng, size=64)
    r1, r2, r3 = enc.backbone_forward(Tensor(rng.random((3, 64, 64))))
    assert r1.shape == (4, 16, 16)
    assert r2.shape == (6, 8, 8)
    assert r3.shape == (8, 4, 4)


def test_backbone_rejects_wrong_size(rng):
    enc = small_encoder(rng, size=32)
    with pytest.raises(ShapeError):
        enc.backbone_forward(Tensor(rng.random((3, 64, 64))))
    with pytest.raises(ShapeError):
        enc.backbone_forward(Tensor(rng.random((1, 32, 32))))


def test_zero_image_finite(rng):
    enc = small_encoder(rng)
    pyr = enc(Tensor(np.zeros((3, 32, 32))))
    for level in pyr.levels:
        assert np.all(np.isfinite(level.data))


def test_pyramid_shapes_and_shared_dim(rng):
    enc = small_encoder(rng, size=32)
    pyr = enc(Tensor(rng.random((3, 32, 32))))
    assert pyr.f1.shape == (8, 8, 8)
    assert pyr.f2.shape == (8, 4, 4)
    assert pyr.f3.shape == (8, 2, 2)


def test_encoder_deterministic(rng):
    enc = small_encoder(rng)
    img = Tensor(rng.random((3, 32, 32)))
    a = enc(img)
    b = enc(img)
    for x, y in zip(a.levels, b.levels):
        np.testing.assert_array_equal(x.data, y.data)


def test_attention_rows_sum_to_one(rng):
    blk = SelfAttentionBlock(rng, dim=8, heads=2, grid=3)
    tokens = Tensor(rng.standard_normal((9, 8)))
    weights, _ = blk._attention(tokens)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-9)


def test_attention_uniform_for_equal_tokens(rng):
    blk = SelfAttentionBlock(rng, dim=8, heads=2, grid=4)
    tokens = Tensor(np.tile(rng.standard_normal(8), (16, 1)))
    weights, _ = blk._attention(tokens)
    np.testing.assert_allclose(weights.data, 1.0 / 16.0, atol=1e-9)


def test_attention_block_preserves_shape(rng):
    blk = SelfAttentionBlock(rng, dim=8, heads=4, grid=2)
    out = blk(Tensor(rng.standard_normal((8, 2, 2))))
    assert out.shape == (8, 2, 2)
    with pytest.raises(ConfigError):
        SelfAttentionBlock(rng, dim=6, heads=4, grid=2)
    with pytest.raises(ShapeError):
        blk(Tensor(rng.standard_normal((8, 3, 3))))


def test_fusion_zero_coarse_keeps_fine_path(rng):
    enc = small_encoder(rng)
    stages = enc.backbone_forward(Tensor(rng.random((3, 32, 32))))
    pyr = enc.fuse_pyramid(stages, Tensor(np.zeros((8, 2, 2))))
    assert np.abs(pyr.f1.data).max() > 0.0


def test_fusion_coarse_perturbation_is_local(rng):
    enc = small_encoder(rng)
    stages = enc.backbone_forward(Tensor(rng.random((3, 32, 32))))
    attended = enc.attention(enc.coarse_proj(stages[2]))
    base = enc.fuse_pyramid(stages, attended)

    bumped = Tensor(attended.data.copy())
    bumped.data[:, 1, 1] += 1.0
    moved = enc.fuse_pyramid(stages, bumped)

    diff = np.abs(moved.f1.data - base.f1.data).sum(axis=0)
    changed = diff > 0.0
    # The perturbed stride-16 cell upsamples to a 4x4 block at stride 4;
    # nothing outside that block may move.
    expected = np.zeros_like(changed)
    expected[4:8, 4:8] = True
    assert changed[expected].any()
    assert not changed[~expected].any()


def test_pyramid_alignment_block_structure(rng):
    # A stride-16 cell (i,j) covers exactly the 2x2 block (2i..2i+1, 2j..2j+1)
    # at stride 8 through nearest upsampling.
    enc = small_encoder(rng)
    stages = enc.backbone_forward(Tensor(rng.random((3, 32, 32))))
    attended = enc.attention(enc.coarse_proj(stages[2]))
    base = enc.fuse_pyramid(stages, attended)
    bumped = Tensor(attended.data.copy())
    bumped.data[:, 0, 1] += 1.0
    moved = enc.fuse_pyramid(stages, bumped)
    diff2 = np.abs(moved.f2.data - base.f2.data).sum(axis=0)
    assert (diff2[0:2, 2:4] > 0).any()
    # The bottom-up 3x3 stride-2 conv adds a one-cell halo below the block.
    outside = np.ones_like(diff2, dtype=bool)
    outside[0:3, 2:4] = False
    assert diff2[outside].max() == 0.0


def test_encoder_gradients_directional(rng):
    # Elementwise FD over every parameter is infeasible; probing random
    # parameter directions still exercises every layer's backward.
    cfg = EncoderConfig(input_size=16, channels=(3, 4, 5), dim=4, attention_heads=2)
    enc = PyramidEncoder(cfg, rng)
    img = rng.random((3, 16, 16))
    params = enc.params()

    def loss_value():
        pyr = enc(Tensor(img))
        return sum(((lvl * lvl).sum() for lvl in pyr.levels), start=Tensor(0.0))

    loss_value().backward()
    h = 1e-5
    for trial in range(3):
        gen = np.random.default_rng(100 + trial)
        direction = {n: gen.standard_normal(p.shape) for n, p in params.items()}

        def shift(scale):
            for n, d in direction.items():
                params[n].data += scale * d

        analytic = sum(float((params[n].grad * d).sum()) for n, d in direction.items())
        shift(+h)
        hi = loss_value().item()
        shift(-2.0 * h)
        lo = loss_value().item()
        shift(+h)
        numeric = (hi - lo) / (2.0 * h)
        assert abs(analytic - numeric) / (abs(numeric) + 1e-12) < 1e-4


def test_encoder_input_gradients(rng):
    cfg = EncoderConfig(input_size=16, channels=(2, 3, 4), dim=4, attention_heads=2)
    enc = PyramidEncoder(cfg, rng)
    img = rng.random((3, 16, 16))

    def build(ts):
        pyr = enc(ts[0])
        return sum(((lvl * lvl).sum() for lvl in pyr.levels), start=Tensor(0.0))

    check_gradients(build, [img])


def test_param_names_unique_and_complete(rng):
    enc = small_encoder(rng)
    params = enc.params()
    assert len(params) == len(set(params))
    assert all(p.requires_grad for p in params.values())
    assert any(n.startswith("backbone/") for n in params)
    assert any(n.startswith("attn/") for n in params)
    assert any(n.startswith("fuse/") for n in params)
