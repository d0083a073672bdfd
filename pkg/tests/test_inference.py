import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from noisierplus.errors import ConfigError, DivergenceError
from noisierplus.imaging import Domain, ImagePlane
from noisierplus.inference import (
    InferenceConfig,
    blend_weight_map,
    denoise_trace,
    feather_profile,
    tile_layout,
    tile_process,
)
from noisierplus.net import UNetConfig, build_unet
from noisierplus.training import TrainConfig, TrainedModel


class FnModel:
    """Stand-in exposing the ``apply`` interface with a chosen function."""

    def __init__(self, fn, depth=1):
        self.fn = fn
        self.unet_config = UNetConfig(depth=depth, base_channels=1)
        self.calls = 0

    def apply(self, arr):
        self.calls += 1
        return self.fn(np.asarray(arr, dtype=float))


def identity_unet(cfg=UNetConfig(depth=1, base_channels=4)):
    """U-Net whose weights route the input through the skip path unchanged (for inputs >= 0)."""
    net = build_unet(cfg, 0, dtype=torch.float64)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
        block = net.down[0]
        block[0].weight[0, 0, 1, 1] = 1.0
        block[2].weight[0, 0, 1, 1] = 1.0
        dec = net.dec[-1]
        dec[0].weight[0, cfg.base_channels, 1, 1] = 1.0  # skip half of the concat
        dec[2].weight[0, 0, 1, 1] = 1.0
        net.out.weight[0, 0, 0, 0] = 1.0
    return TrainedModel(net, cfg, TrainConfig())


@given(st.integers(1, 90), st.integers(1, 90), st.sampled_from([(16, 4), (32, 8), (8, 0), (8, 7)]))
@settings(max_examples=60, deadline=None)
def test_partition_of_unity(h, w, tile):
    size, overlap = tile
    np.testing.assert_allclose(blend_weight_map((h, w), size, overlap), 1.0, atol=1e-12)


def test_feather_profile():
    np.testing.assert_allclose(feather_profile(8, 3), [0.25, 0.5, 0.75, 1, 1, 0.75, 0.5, 0.25])
    assert np.all(feather_profile(8, 0) == 1)


def test_layout_covers_padded_image():
    pad, padded, origins = tile_layout((37, 50), 16, 4)
    assert pad[0][0] == 4 and pad[1][0] == 4
    cover = np.zeros(padded, bool)
    for r, c in origins:
        assert r + 16 <= padded[0] and c + 16 <= padded[1]
        cover[r:r + 16, c:c + 16] = True
    assert cover.all()


def test_exact_tile_single_pass():
    m = FnModel(lambda a: a * 2)
    x = np.arange(256.0).reshape(16, 16)
    out = tile_process(m, x, 16, 4)
    np.testing.assert_array_equal(out, 2 * x)
    assert m.calls == 1


@pytest.mark.parametrize("shape", [(37, 50), (16, 40), (5, 9), (64, 64)])
def test_pointwise_model_is_exact_through_tiling(shape):
    x = np.random.default_rng(1).uniform(0, 255, shape)
    out = tile_process(FnModel(lambda a: a**2 / 255 + 3), x, 16, 4, batch_size=3)
    np.testing.assert_allclose(out, x**2 / 255 + 3, atol=1e-9)


def test_identity_unet_tiled():
    m = identity_unet()
    x = np.random.default_rng(2).uniform(0, 255, (37, 50))
    np.testing.assert_allclose(m.apply(x[:16, :16]), x[:16, :16], atol=1e-12)
    np.testing.assert_allclose(tile_process(m, x, 16, 4), x, atol=1e-9)


@pytest.mark.parametrize("mode", ["algebraic", "asymptotic", "closed-form-unbiased"])
def test_identity_denoise_round_trip(mode):
    m = identity_unet()
    noisy = ImagePlane(np.random.default_rng(3).integers(1, 256, (37, 50)).astype(float), Domain.PIXEL)
    icfg = InferenceConfig(iterations=2, tile_size=16, tile_overlap=4, inverse_mode=mode)
    out, passes = denoise_trace(m, noisy, icfg, ground_truth=noisy)
    assert len(passes) == 2 and out.domain is Domain.PIXEL
    if mode == "algebraic":
        np.testing.assert_allclose(out.data, noisy.data, atol=1e-5)
        assert passes[0][1] > 100
    else:
        # the other inverses are biased by design, but within a pixel here
        assert np.max(np.abs(out.data - noisy.data)) < 1.0


def test_divergence_names_iteration():
    calls = {"n": 0}

    def fn(a):
        calls["n"] += 1
        return a if calls["n"] == 1 else a * np.nan

    noisy = ImagePlane(np.full((16, 16), 100.0), Domain.PIXEL)
    with pytest.raises(DivergenceError, match="iteration 2"):
        denoise_trace(FnModel(fn), noisy, InferenceConfig(iterations=2, tile_size=16, tile_overlap=4))


def test_config_validation():
    with pytest.raises(ConfigError):
        InferenceConfig(tile_size=16, tile_overlap=16)
    with pytest.raises(ConfigError):
        InferenceConfig(iterations=0)
    with pytest.raises(ConfigError):
        InferenceConfig(tile_size=24).check_depth(4)
    with pytest.raises(ConfigError):
        denoise_trace(FnModel(lambda a: a), ImagePlane(np.zeros((8, 8)), Domain.ANSCOMBE),
                      InferenceConfig(tile_size=8, tile_overlap=2))
