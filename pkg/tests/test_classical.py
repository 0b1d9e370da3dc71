import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zrudc import classical as C
from zrudc.imageio import ImageRGB
from zrudc.synthetic import (
    DegradeConfig,
    add_haze,
    clean_scene,
    degrade,
    planted_haze,
    seeded_rng,
    smooth_field,
    vignette,
)

AIR = (0.9, 0.9, 0.9)


def sky_scene(seed, size=128):
    """Hazy scene whose top band is pure airlight, as an overcast sky would be."""
    clean = clean_scene(size, size, seeded_rng(5, seed))
    t = 0.4 + 0.5 * smooth_field(size, size, seeded_rng(6, seed))
    t[: size * 3 // 8] = 0.02
    return ImageRGB(np.clip(add_haze(clean.pixels.astype(np.float64), t[None], AIR), 0, 1))


class TestConfig:
    def test_defaults(self):
        cfg = C.DehazeConfig()
        assert (cfg.window, cfg.omega, cfg.t_floor, cfg.airlight_quantile, cfg.gamma) == (45, 0.95, 0.1, 0.001, 0.7)

    @pytest.mark.parametrize(
        "kw", [{"window": 4}, {"omega": 0.0}, {"omega": 1.5}, {"t_floor": 0.0}, {"t_floor": 1.0}, {"gamma": 0}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            C.DehazeConfig(**kw)


class TestAirlight:
    @pytest.mark.parametrize("seed", range(4))
    def test_planted_airlight_recovered(self, seed):
        est = C.estimate_airlight(sky_scene(seed))
        assert np.all(np.abs(est - 0.9) <= 0.05)

    def test_constant_image(self):
        est = C.estimate_airlight(ImageRGB(np.full((3, 20, 20), 0.37)))
        np.testing.assert_allclose(est, 0.37, rtol=0, atol=1e-7)

    def test_full_quantile_is_channel_mean(self, rng):
        img = ImageRGB(rng.random((3, 16, 24)))
        est = C.estimate_airlight(img, C.DehazeConfig(airlight_quantile=1.0))
        np.testing.assert_allclose(est, img.pixels.reshape(3, -1).mean(1), atol=1e-12)

    def test_at_least_one_pixel(self, rng):
        img = ImageRGB(rng.random((3, 8, 8)))
        est = C.estimate_airlight(img, C.DehazeConfig(window=1))
        dark = img.pixels.min(0).ravel()
        np.testing.assert_array_equal(est, img.pixels.reshape(3, -1)[:, np.argmax(dark)])


class TestDehaze:
    def test_haze_free_identity(self, rng):
        clean = clean_scene(48, 48, rng)
        out = C.dehaze(clean, C.DehazeConfig(window=15, omega=1.0))
        np.testing.assert_allclose(out.pixels, clean.pixels, atol=1e-6)

    def test_inverts_half_haze(self):
        for seed in range(3):
            clean = clean_scene(64, 64, seeded_rng(1, seed))
            hazy = ImageRGB(add_haze(clean.pixels.astype(np.float64), 0.5, AIR))
            out = C.dehaze(hazy, C.DehazeConfig(window=15, omega=1.0), airlight=AIR)
            assert np.mean(np.abs(out.pixels - clean.pixels)) <= 2 / 255

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_output_bounded(self, seed):
        img = ImageRGB(np.random.default_rng(seed).random((3, 12, 12)))
        out = C.dehaze(img, C.DehazeConfig(window=5))
        assert out.pixels.min() >= 0 and out.pixels.max() <= 1

    def test_lowers_dark_channel(self):
        for seed in range(5):
            clean = clean_scene(64, 64, seeded_rng(2, seed))
            hazy, _ = planted_haze(clean, seeded_rng(3, seed))
            out = C.dehaze(hazy, C.DehazeConfig(window=15))
            assert C.dark_channel_array(out.pixels, 15).mean() <= C.dark_channel_array(hazy.pixels, 15).mean()

    def test_deterministic(self):
        img = sky_scene(0, 64)
        np.testing.assert_array_equal(C.baseline(img).pixels, C.baseline(img).pixels)


class TestGamma:
    def test_square_root(self):
        out = C.gamma_correct(ImageRGB(np.full((3, 8, 8), 0.25)), 0.5)
        assert np.all(out.pixels == 0.5)

    def test_unit_gamma_identity(self, rng):
        img = ImageRGB(rng.random((3, 8, 8)))
        np.testing.assert_array_equal(C.gamma_correct(img, 1.0).pixels, img.pixels)

    @pytest.mark.parametrize("gamma", [0.3, 0.7, 1.0, 2.2])
    def test_endpoints_fixed(self, gamma):
        px = np.zeros((3, 8, 8))
        px[:, ::2] = 1.0
        np.testing.assert_array_equal(C.gamma_correct(ImageRGB(px), gamma).pixels, px)

    @pytest.mark.parametrize("gamma", [0.0, -1.0])
    def test_non_positive_rejected(self, gamma):
        with pytest.raises(ValueError):
            C.gamma_correct(ImageRGB(np.zeros((3, 8, 8))), gamma)


class TestSynthetic:
    def test_clean_scene_dark_channel_zero(self, rng):
        img = clean_scene(40, 30, rng)
        assert np.all(img.pixels.min(axis=0) == 0)

    def test_degrade_replays_bit_identically(self, rng):
        img = clean_scene(32, 32, rng)
        cfg = DegradeConfig(seed=9)
        np.testing.assert_array_equal(degrade(img, cfg).pixels, degrade(img, cfg).pixels)

    def test_zero_strengths_identity(self, rng):
        img = clean_scene(32, 32, rng)
        cfg = DegradeConfig(haze_strength=0.0, vignette_strength=0.0, blur_sigma=0.0)
        np.testing.assert_array_equal(degrade(img, cfg).pixels, img.pixels)

    def test_degrade_raises_dark_channel(self, rng):
        img = clean_scene(32, 32, rng)
        out = degrade(img, DegradeConfig(vignette_strength=0.0))
        assert out.pixels.min(axis=0).mean() > 0.05

    def test_vignette_profile(self):
        v = vignette(10, 10, 0.3)
        assert v[0, 0] == pytest.approx(0.7) and v.max() < 1.0 and v.min() == pytest.approx(0.7)

    def test_planted_transmission_range(self, rng):
        _, t = planted_haze(clean_scene(16, 16, rng), rng)
        assert t.min() == pytest.approx(0.4) and t.max() == pytest.approx(0.9)

    @pytest.mark.parametrize("kw", [{"haze_strength": 1.5}, {"blur_sigma": -1}, {"airlight": (1, 1)}])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            DegradeConfig(**kw)
