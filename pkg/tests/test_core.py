import numpy as np
import pytest

from lidarkp.core import (
    CoreError,
    GrayImage,
    ImageVariant,
    LidarFrame,
    PointCloud,
    Pose,
    RgbImage,
    VariantKind,
    cloud_from_range,
    normalize_intensity,
    pixel_to_point_index,
    variant_to_source_pixel,
)


class TestPixelToPointIndex:
    def test_origin(self):
        assert pixel_to_point_index(0, 0, 1024) == 0

    def test_direct_evaluation(self):
        assert pixel_to_point_index(2, 3, 1024) == 2051

    def test_last_pixel_of_64x1024(self):
        assert pixel_to_point_index(63, 1023, 1024, height=64) == 65535

    def test_out_of_bounds(self):
        with pytest.raises(CoreError):
            pixel_to_point_index(0, 1024, 1024)
        with pytest.raises(CoreError):
            pixel_to_point_index(-1, 0, 1024)
        with pytest.raises(CoreError):
            pixel_to_point_index(64, 0, 1024, height=64)

    def test_bijection_onto_range(self):
        h, w = 8, 16
        seen = {pixel_to_point_index(r, c, w, h) for r in range(h) for c in range(w)}
        assert seen == set(range(h * w))


class TestVariantToSourcePixel:
    def test_floor_division(self):
        assert variant_to_source_pixel(7, 5, 2) == (2, 3)
        assert variant_to_source_pixel(0, 1, 2) == (0, 0)

    def test_identity_at_scale_1(self):
        assert variant_to_source_pixel(4, 4, 1) == (4, 4)
        for x in range(10):
            for y in range(10):
                assert variant_to_source_pixel(x, y, 1) == (y, x)

    def test_scale_2_block_maps_to_one_pixel(self):
        for r in range(4):
            for c in range(4):
                for dy in (0, 1):
                    for dx in (0, 1):
                        assert variant_to_source_pixel(2 * c + dx, 2 * r + dy, 2) == (r, c)

    def test_bad_scale(self):
        with pytest.raises(CoreError):
            variant_to_source_pixel(0, 0, 3)


class TestNormalizeIntensity:
    def test_all_zero(self):
        out = normalize_intensity(np.zeros((4, 4), dtype=np.uint16), 0.99)
        assert np.all(out.data == 0)

    def test_constant_maps_to_255(self):
        out = normalize_intensity(np.full((4, 4), 1000, dtype=np.uint16), 1.0)
        assert np.all(out.data == 255)

    def test_full_ramp_linear_within_one(self):
        raw = np.arange(65536, dtype=np.uint16).reshape(256, 256)
        out = normalize_intensity(raw, 1.0)
        expected = raw.astype(np.float64) * 255.0 / 65535.0
        assert np.abs(out.data.astype(np.float64) - expected).max() <= 1.0

    def test_hot_pixels_clamped(self):
        raw = np.full((10, 10), 100, dtype=np.uint16)
        raw[0, 0] = 65535
        out = normalize_intensity(raw, 0.5)
        assert out.data[0, 0] == 255
        assert out.data[5, 5] == 255  # 100 is at the 0.5 quantile here

    def test_empty_or_bad_percentile(self):
        with pytest.raises(CoreError):
            normalize_intensity(np.zeros((0, 4), dtype=np.uint16))
        with pytest.raises(CoreError):
            normalize_intensity(np.zeros((4, 4), dtype=np.uint16), 0.0)


class TestImageTypes:
    def test_gray_rejects_bad_shapes(self):
        with pytest.raises(CoreError):
            GrayImage(np.zeros((4, 4, 3), dtype=np.uint8))
        with pytest.raises(CoreError):
            GrayImage(np.zeros((4, 4), dtype=np.float32))

    def test_rgb_shape(self):
        img = RgbImage(np.zeros((4, 5, 3), dtype=np.uint8))
        assert (img.height, img.width) == (4, 5)
        with pytest.raises(CoreError):
            RgbImage(np.zeros((4, 5), dtype=np.uint8))

    def test_images_are_read_only(self):
        img = GrayImage(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            img.data[0, 0] = 1

    def test_variant_kind_table(self):
        expect = {
            VariantKind.RNG: (1, 1),
            VariantKind.SIG: (1, 1),
            VariantKind.RNG_2R: (2, 1),
            VariantKind.SIG_2R: (2, 1),
            VariantKind.SIG_C: (1, 3),
            VariantKind.SIG_2R_C: (2, 3),
        }
        for kind, (scale, channels) in expect.items():
            assert (kind.scale, kind.channels) == (scale, channels)

    def test_variant_channel_mismatch(self):
        gray = GrayImage(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(CoreError):
            ImageVariant(VariantKind.SIG_C, gray)


class TestLidarFrame:
    def test_dimension_checks(self):
        g = GrayImage(np.zeros((2, 4), dtype=np.uint8))
        g2 = GrayImage(np.zeros((2, 5), dtype=np.uint8))
        cloud = PointCloud(np.zeros((8, 3), dtype=np.float32), np.zeros(8, bool))
        LidarFrame(0.0, g, g, cloud)
        with pytest.raises(CoreError):
            LidarFrame(0.0, g, g2, cloud)
        short = PointCloud(np.zeros((7, 3), dtype=np.float32), np.zeros(7, bool))
        with pytest.raises(CoreError):
            LidarFrame(0.0, g, g, short)

    def test_validity_mask_matches_zero_range(self, rng):
        range_raw = rng.integers(0, 3, size=(4, 8)).astype(np.uint16)
        pts = rng.normal(size=(32, 3)).astype(np.float32)
        cloud = cloud_from_range(range_raw, pts)
        assert np.array_equal(cloud.valid, range_raw.reshape(-1) > 0)
        assert np.all(cloud.points[~cloud.valid] == 0)
        assert np.array_equal(cloud.points[cloud.valid], pts[range_raw.reshape(-1) > 0])


class TestPose:
    def test_identity_round_trip(self):
        p = Pose.identity(1.5)
        assert np.allclose(p.matrix(), np.eye(4))
        assert p.timestamp == 1.5

    def test_from_matrix_round_trip(self, rng):
        for _ in range(20):
            rotvec = rng.normal(size=3)
            from scipy.spatial.transform import Rotation

            mat = np.eye(4)
            mat[:3, :3] = Rotation.from_rotvec(rotvec).as_matrix()
            mat[:3, 3] = rng.normal(size=3)
            p = Pose.from_matrix(mat, 0.0)
            assert np.allclose(p.matrix(), mat, atol=1e-12)
            assert p.quat[3] >= 0  # canonical sign

    def test_rejects_non_rotation(self):
        mat = np.eye(4)
        mat[0, 0] = 0.5
        with pytest.raises(CoreError):
            Pose.from_matrix(mat)

    def test_rejects_off_unit_quaternion(self):
        with pytest.raises(CoreError):
            Pose(np.array([0.0, 0.0, 0.0, 1.1]), np.zeros(3))
