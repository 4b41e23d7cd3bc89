import numpy as np
import pytest

from lidarkp.core import GrayImage
from lidarkp.preprocess import (
    PreprocessConfig,
    PreprocessError,
    clahe,
    clahe_tile_mappings,
    gamma_correct,
    preprocess_range,
    preprocess_signal,
)


def equalize_oracle(data: np.ndarray) -> np.ndarray:
    """Plain histogram equalization via rank counting, independent of the
    histogram/cumsum path used by the implementation."""
    flat = np.sort(data.reshape(-1))
    n = flat.size
    ranks = np.searchsorted(flat, data.reshape(-1), side="right")
    return np.floor(ranks * 255.0 / n + 0.5).astype(np.uint8).reshape(data.shape)


class TestGamma:
    def test_identity_exponent_exhaustive(self):
        img = GrayImage(np.arange(256, dtype=np.uint8).reshape(16, 16))
        assert np.array_equal(gamma_correct(img, 1.0).data, img.data)

    def test_max_is_fixed_point(self):
        img = GrayImage(np.full((4, 4), 255, dtype=np.uint8))
        for g in (0.2, 0.5, 1.0, 2.4):
            assert np.all(gamma_correct(img, g).data == 255)

    def test_64_at_half_gamma(self):
        img = GrayImage(np.full((2, 2), 64, dtype=np.uint8))
        assert np.all(gamma_correct(img, 0.5).data == 128)

    def test_monotone_exhaustive(self):
        img = GrayImage(np.arange(256, dtype=np.uint8).reshape(1, 256))
        for g in (0.3, 0.5, 1.0, 2.0):
            out = gamma_correct(img, g).data.reshape(-1)
            assert np.all(np.diff(out.astype(int)) >= 0)

    def test_bad_gamma(self):
        img = GrayImage(np.zeros((2, 2), dtype=np.uint8))
        with pytest.raises(PreprocessError):
            gamma_correct(img, 0.0)

    def test_requires_8bit(self):
        img = GrayImage(np.zeros((2, 2), dtype=np.uint16))
        with pytest.raises(PreprocessError):
            gamma_correct(img, 0.5)


class TestClahe:
    def test_constant_image_stays_constant(self):
        img = GrayImage(np.full((32, 64), 128, dtype=np.uint8))
        out = clahe(img, 2.0, (4, 4)).data
        assert out.min() == out.max()

    def test_infinite_clip_single_tile_equals_equalization(self, rng):
        data = rng.integers(0, 200, size=(40, 50)).astype(np.uint8)
        img = GrayImage(data)
        out = clahe(img, float("inf"), (1, 1)).data
        assert np.array_equal(out, equalize_oracle(data))

    def test_tile_mappings_monotone(self, rng):
        data = rng.integers(0, 256, size=(64, 64)).astype(np.uint8)
        mapping, _ = clahe_tile_mappings(data, 2.0, (8, 8))
        diffs = np.diff(mapping.astype(int), axis=2)
        assert np.all(diffs >= 0)

    def test_clip_limits_dark_region_boost(self):
        # 97% of pixels sit at 10: plain equalization lifts them near 255,
        # a tight clip must hold that boost down
        data = np.full((64, 64), 10, dtype=np.uint8)
        data[::7, ::5] = 200
        unbounded = clahe(GrayImage(data), float("inf"), (1, 1)).data
        clipped = clahe(GrayImage(data), 1.5, (1, 1)).data
        assert int(unbounded[1, 1]) > 200
        assert int(clipped[1, 1]) < int(unbounded[1, 1])

    def test_image_smaller_than_grid(self):
        img = GrayImage(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(PreprocessError):
            clahe(img, 2.0, (8, 8))

    def test_deterministic(self, rng):
        data = rng.integers(0, 256, size=(32, 48)).astype(np.uint8)
        a = clahe(GrayImage(data), 2.0, (4, 4)).data
        b = clahe(GrayImage(data), 2.0, (4, 4)).data
        assert np.array_equal(a, b)


class TestPreprocessSignal:
    def test_bright_pixels_pass_through(self):
        data = np.full((32, 32), 250, dtype=np.uint8)
        cfg = PreprocessConfig()
        out = preprocess_signal(GrayImage(data), cfg)
        assert np.array_equal(out.data, data)

    def test_all_dark_reduces_to_equalization(self, rng):
        data = rng.integers(0, 239, size=(40, 40)).astype(np.uint8)
        cfg = PreprocessConfig(gamma=1.0, clahe_clip=float("inf"), clahe_tiles=(1, 1))
        out = preprocess_signal(GrayImage(data), cfg)
        assert np.array_equal(out.data, equalize_oracle(data))

    def test_only_sub_threshold_pixels_replaced(self, rng):
        data = rng.integers(0, 256, size=(48, 48)).astype(np.uint8)
        cfg = PreprocessConfig()
        out = preprocess_signal(GrayImage(data), cfg).data
        below = data < cfg.p_thresh
        assert np.array_equal(out[~below], data[~below])
        enhanced = gamma_correct(clahe(GrayImage(data), cfg.clahe_clip, cfg.clahe_tiles), cfg.gamma)
        assert np.array_equal(out[below], enhanced.data[below])


class TestPreprocessRange:
    def test_zero_stays_zero(self):
        cfg = PreprocessConfig()
        out = preprocess_range(GrayImage(np.zeros((8, 8), dtype=np.uint8)), cfg)
        assert np.all(out.data == 0)

    def test_constant_64_doubles_at_half_gamma(self):
        cfg = PreprocessConfig(gamma=0.5)
        out = preprocess_range(GrayImage(np.full((8, 8), 64, dtype=np.uint8)), cfg)
        assert np.all(out.data == 128)

    def test_gamma_one_is_identity(self, rng):
        data = rng.integers(0, 256, size=(8, 8)).astype(np.uint8)
        cfg = PreprocessConfig(gamma=1.0)
        assert np.array_equal(preprocess_range(GrayImage(data), cfg).data, data)


class TestConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(PreprocessError):
            PreprocessConfig(gamma=-1.0)
        with pytest.raises(PreprocessError):
            PreprocessConfig(p_thresh=0)
        with pytest.raises(PreprocessError):
            PreprocessConfig(clahe_clip=0.5)
        with pytest.raises(PreprocessError):
            PreprocessConfig(clahe_tiles=(0, 8))
