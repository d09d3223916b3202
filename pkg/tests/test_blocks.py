"""Residual atrous blocks, pyramid pooling, and the combine/upsample glue."""

import numpy as np
import pytest

from atrousseg.autodiff import Node, ShapeError, parameter
from atrousseg.blocks import (BlockConfig, Combine, Conv2DN, PSPPooling,
                              ResBlockA, UpSampleBlock, clamp_scales)
from conftest import numeric_gradient, rel_err


def make_input(rng, shape):
    return Node(rng.normal(size=shape).astype(np.float64))


class TestBlockConfig:
    def test_valid(self):
        cfg = BlockConfig(filters=8, dilations=(1, 3, 15))
        assert cfg.kernel == 3 and cfg.stride == 1

    @pytest.mark.parametrize("dilations", [(), (2, 3), (1, 3, 3), (1, 5, 3)])
    def test_bad_dilations(self, dilations):
        with pytest.raises(ValueError):
            BlockConfig(filters=8, dilations=dilations)

    def test_bad_filters(self):
        with pytest.raises(ValueError):
            BlockConfig(filters=0)


class TestConv2DN:
    def test_shapes_and_normalization(self, rng):
        m = Conv2DN(3, 6, kernel=3, rng=rng, dtype=np.float64)
        m.train(True)
        out = m(make_input(rng, (4, 3, 8, 8)))
        assert out.shape == (4, 6, 8, 8)
        assert np.abs(out.value.mean(axis=(0, 2, 3))).max() < 1e-6

    def test_conv_has_no_bias(self, rng):
        m = Conv2DN(3, 6, rng=rng)
        names = [n for n, _ in m.named_parameters()]
        assert "conv.bias" not in names
        assert "bn.gamma" in names and "bn.beta" in names


class TestResBlockA:
    def test_identity_plus_branches(self, rng):
        cfg = BlockConfig(filters=4, dilations=(1, 3))
        block = ResBlockA(cfg, rng=rng, dtype=np.float64)
        block.eval()
        x = make_input(rng, (2, 4, 8, 8))
        out = block(x)
        assert out.shape == x.shape
        # identity is part of the sum: zeroing every conv weight leaves x
        for name, p in block.named_parameters():
            if "conv" in name and name.endswith("weight"):
                p.value[...] = 0.0
        assert np.allclose(block(x).value, x.value, atol=1e-5)

    def test_branch_count_tracks_dilations(self, rng):
        cfg = BlockConfig(filters=4, dilations=(1, 3, 15, 31))
        block = ResBlockA(cfg, rng=rng)
        assert len(block.branches) == 4

    def test_channel_mismatch_guidance(self, rng):
        cfg = BlockConfig(filters=8, dilations=(1,))
        block = ResBlockA(cfg, rng=rng)
        with pytest.raises(ShapeError, match="1x1"):
            block(make_input(rng, (1, 4, 8, 8)))

    def test_gradients_flow(self, rng):
        cfg = BlockConfig(filters=2, dilations=(1, 2))
        block = ResBlockA(cfg, rng=rng, dtype=np.float64)
        block.eval()
        x0 = rng.normal(size=(1, 2, 6, 6))
        x = parameter(x0.copy())
        (block(x) ** 2).sum().backward()
        num = numeric_gradient(
            lambda v: (block(parameter(v)) ** 2).sum().item(), x0.copy())
        assert rel_err(x.grad, num) < 1e-6


class TestPSPPooling:
    def test_channel_partition_near_equal(self, rng):
        psp = PSPPooling(6, scales=(1, 2, 4), rng=rng, dtype=np.float64)
        psp.eval()
        out = psp(make_input(rng, (1, 6, 8, 8)))
        assert out.shape == (1, 6, 8, 8)

    def test_rejects_too_few_channels(self, rng):
        with pytest.raises(ValueError, match="channels"):
            PSPPooling(3, scales=(1, 2, 4, 8), rng=rng)

    def test_adaptive_clamps_scales(self, rng):
        psp = PSPPooling(8, scales=(1, 2, 4, 8), adaptive=True,
                         rng=rng, dtype=np.float64)
        psp.eval()
        # 4x4 map cannot host an 8-cell grid; adaptive mode drops it.
        out = psp(make_input(rng, (1, 8, 4, 4)))
        assert out.shape == (1, 8, 4, 4)

    def test_strict_mode_raises_on_bad_grid(self, rng):
        psp = PSPPooling(8, scales=(1, 2, 4, 8), rng=rng, dtype=np.float64)
        with pytest.raises(ShapeError):
            psp(make_input(rng, (1, 8, 4, 4)))

    def test_clamp_scales_helper(self):
        assert clamp_scales((1, 2, 4, 8), 4, 4) == (1, 2, 4)
        assert clamp_scales((1, 2, 4), 64, 64) == (1, 2, 4)
        assert clamp_scales((2, 4), 3, 3) == (1,)

    def test_gradients_flow(self, rng):
        psp = PSPPooling(4, scales=(1, 2), rng=rng, dtype=np.float64)
        psp.eval()
        x0 = rng.normal(size=(1, 4, 4, 4))
        x = parameter(x0.copy())
        (psp(x) ** 2).sum().backward()
        num = numeric_gradient(
            lambda v: (psp(parameter(v)) ** 2).sum().item(), x0.copy())
        assert rel_err(x.grad, num) < 1e-6


class TestCombineUpsample:
    def test_combine_fuses_to_filters(self, rng):
        comb = Combine(4, 6, filters=5, rng=rng, dtype=np.float64)
        comb.eval()
        out = comb(make_input(rng, (2, 4, 8, 8)), make_input(rng, (2, 6, 8, 8)))
        assert out.shape == (2, 5, 8, 8)

    def test_combine_spatial_mismatch(self, rng):
        comb = Combine(4, 4, filters=4, rng=rng)
        with pytest.raises(ShapeError, match="[Uu]psample"):
            comb(make_input(rng, (1, 4, 4, 4)), make_input(rng, (1, 4, 8, 8)))

    def test_upsample_block_doubles(self, rng):
        up = UpSampleBlock(6, 3, rng=rng, dtype=np.float64)
        up.eval()
        out = up(make_input(rng, (1, 6, 4, 4)))
        assert out.shape == (1, 3, 8, 8)
