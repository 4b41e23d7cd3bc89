import numpy as np
import pytest
from scipy.spatial.distance import cdist

from lidarkp.core import GrayImage, LidarFrame, VariantKind, cloud_from_range
from lidarkp.features import Detections, Keypoint
from lidarkp.tracking import (
    Combination,
    SampledCloud,
    TrackState,
    TrackingError,
    builtin_combinations,
    combination_by_name,
    descriptor_distances,
    keypoints_to_indices,
    mnn_match,
    sample,
    track,
)


EXPECTED_TABLE = {
    "comb_0": ["rng", "sig", "sig_2r"],
    "comb_1": ["rng", "sig", "sig_c"],
    "comb_2": ["rng", "sig", "sig_2r_c"],
    "comb_3": ["rng", "sig", "sig_c", "sig_2r", "sig_2r_c"],
    "comb_4": ["rng", "rng_2r", "sig", "sig_c", "sig_2r", "sig_2r_c"],
    "comb_5": ["rng", "rng_2r", "sig_2r", "sig_2r_c"],
    "comb_6": ["rng", "rng_2r", "sig", "sig_2r_c"],
}


def mnn_oracle(dist: np.ndarray) -> set[tuple[int, int]]:
    """Definition check on an independently computed distance matrix."""
    pairs = set()
    for i in range(dist.shape[0]):
        j = int(np.argmin(dist[i]))
        if int(np.argmin(dist[:, j])) == i:
            pairs.add((i, j))
    return pairs


def binary_dist_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    bits_a = np.unpackbits(a, axis=1).astype(np.float64)
    bits_b = np.unpackbits(b, axis=1).astype(np.float64)
    return cdist(bits_a, bits_b, metric="cityblock")


class TestCombinations:
    def test_exact_table(self):
        combs = builtin_combinations()
        assert [c.name for c in combs] == [f"comb_{i}" for i in range(7)]
        for comb in combs:
            assert [k.value for k in comb.kinds] == EXPECTED_TABLE[comb.name]

    def test_lookup(self):
        assert [k.value for k in combination_by_name("comb_2").kinds] == [
            "rng",
            "sig",
            "sig_2r_c",
        ]
        assert len(combination_by_name("comb_4").kinds) == 6

    def test_unknown_name(self):
        with pytest.raises(TrackingError):
            combination_by_name("comb_7")


class TestMnnMatch:
    def test_single_pair_is_mutual(self, rng):
        a = rng.integers(0, 256, size=(1, 32)).astype(np.uint8)
        b = rng.integers(0, 256, size=(1, 32)).astype(np.uint8)
        assert mnn_match(a, b) == [(0, 0)]

    def test_two_vs_one(self):
        # a1 is closer to b1 than a2 is: only (0, 0) is mutual
        a = np.zeros((2, 32), dtype=np.uint8)
        a[1, :] = 0xFF
        b = np.zeros((1, 32), dtype=np.uint8)
        b[0, 0] = 0x01
        assert mnn_match(a, b) == [(0, 0)]

    def test_empty_sides(self, rng):
        d = rng.integers(0, 256, size=(3, 32)).astype(np.uint8)
        empty = np.zeros((0, 32), dtype=np.uint8)
        assert mnn_match(empty, d) == []
        assert mnn_match(d, empty) == []

    def test_mixed_kinds_rejected(self, rng):
        a = rng.integers(0, 256, size=(2, 32)).astype(np.uint8)
        b = rng.normal(size=(2, 32)).astype(np.float32)
        with pytest.raises(TrackingError):
            mnn_match(a, b)

    def test_partial_matching(self, rng):
        a = rng.integers(0, 256, size=(50, 32)).astype(np.uint8)
        b = rng.integers(0, 256, size=(40, 32)).astype(np.uint8)
        pairs = mnn_match(a, b)
        assert len({i for i, _ in pairs}) == len(pairs)
        assert len({j for _, j in pairs}) == len(pairs)

    def test_symmetry(self, rng):
        a = rng.integers(0, 256, size=(30, 32)).astype(np.uint8)
        b = rng.integers(0, 256, size=(25, 32)).astype(np.uint8)
        fwd = set(mnn_match(a, b))
        rev = {(j, i) for i, j in mnn_match(b, a)}
        assert fwd == rev

    def test_against_oracle_binary(self, rng):
        for _ in range(25):
            n, m = rng.integers(1, 60, size=2)
            a = rng.integers(0, 256, size=(n, 32)).astype(np.uint8)
            b = rng.integers(0, 256, size=(m, 32)).astype(np.uint8)
            assert set(mnn_match(a, b)) == mnn_oracle(binary_dist_oracle(a, b))

    def test_against_oracle_float(self, rng):
        for _ in range(25):
            n, m = rng.integers(1, 60, size=2)
            a = rng.normal(size=(n, 16)).astype(np.float32)
            b = rng.normal(size=(m, 16)).astype(np.float32)
            oracle = mnn_oracle(cdist(a.astype(np.float64), b.astype(np.float64)))
            assert set(mnn_match(a, b)) == oracle

    def test_distance_matrix_hamming(self, rng):
        a = rng.integers(0, 256, size=(5, 32)).astype(np.uint8)
        b = rng.integers(0, 256, size=(7, 32)).astype(np.uint8)
        assert np.array_equal(descriptor_distances(a, b), binary_dist_oracle(a, b))


def _detections(coords, desc):
    kps = [Keypoint(float(x), float(y), 1.0) for x, y in coords]
    return Detections(kps, desc, "binary" if desc.dtype == np.uint8 else "float")


class TestTrack:
    def test_first_frame_bootstrap(self, rng):
        state = TrackState()
        desc = rng.integers(0, 256, size=(10, 32)).astype(np.uint8)
        det = _detections([(i, i) for i in range(10)], desc)
        out = track(VariantKind.SIG, det, state)
        assert len(out) == 10
        assert VariantKind.SIG in state.previous

    def test_identical_frames_fully_match(self, rng):
        state = TrackState()
        desc = rng.integers(0, 256, size=(12, 32)).astype(np.uint8)
        det = _detections([(i, 2 * i) for i in range(12)], desc)
        track(VariantKind.SIG, det, state)
        out = track(VariantKind.SIG, det, state)
        assert len(out) == 12

    def test_distance_ceiling_empties_disjoint_sets(self):
        state = TrackState()
        a = np.zeros((4, 32), dtype=np.uint8)
        b = np.full((4, 32), 0xFF, dtype=np.uint8)
        track(VariantKind.SIG, _detections([(i, i) for i in range(4)], a), state)
        out = track(VariantKind.SIG, _detections([(i, i) for i in range(4)], b), state, max_distance=10.0)
        assert len(out) == 0

    def test_streams_are_independent(self, rng):
        state = TrackState()
        desc = rng.integers(0, 256, size=(5, 32)).astype(np.uint8)
        det = _detections([(i, i) for i in range(5)], desc)
        track(VariantKind.SIG, det, state)
        out = track(VariantKind.RNG, det, state)  # first frame for rng stream
        assert len(out) == 5


def tiny_frame(height=4, width=8, invalid_pixels=()):
    range_raw = np.ones((height, width), dtype=np.uint16)
    for r, c in invalid_pixels:
        range_raw[r, c] = 0
    pts = np.zeros((height * width, 3), dtype=np.float32)
    pts[:, 0] = np.arange(height * width)
    pts[:, 1] = 1.0
    return LidarFrame(
        0.0,
        GrayImage(range_raw),
        GrayImage(range_raw),
        cloud_from_range(range_raw, pts),
    )


class TestSample:
    def test_union_of_two_variants(self, rng):
        frame = tiny_frame()
        comb = Combination("test", (VariantKind.RNG, VariantKind.SIG))
        desc = rng.integers(0, 256, size=(2, 32)).astype(np.uint8)
        detections = {
            VariantKind.RNG: _detections([(1, 0), (2, 0)], desc),  # indices 1, 2
            VariantKind.SIG: _detections([(2, 0), (3, 0)], desc),  # indices 2, 3
        }
        out = sample(frame, comb, detections, TrackState())
        assert out.indices.tolist() == [1, 2, 3]
        assert np.array_equal(out.points, frame.cloud.points[[1, 2, 3]])

    def test_zero_range_pixel_excluded(self, rng):
        frame = tiny_frame(invalid_pixels=[(0, 2)])
        comb = Combination("test", (VariantKind.RNG,))
        desc = rng.integers(0, 256, size=(2, 32)).astype(np.uint8)
        detections = {VariantKind.RNG: _detections([(2, 0), (3, 0)], desc)}
        out = sample(frame, comb, detections, TrackState())
        assert out.indices.tolist() == [3]

    def test_scale_aware_mapping(self, rng):
        frame = tiny_frame()
        comb = Combination("test", (VariantKind.SIG_2R,))
        desc = rng.integers(0, 256, size=(3, 32)).astype(np.uint8)
        # 2x variant coordinates (x, y): (5, 3) -> source (1, 2) -> index 10
        detections = {VariantKind.SIG_2R: _detections([(5, 3), (4, 2), (0, 0)], desc)}
        out = sample(frame, comb, detections, TrackState())
        assert out.indices.tolist() == [0, 10]

    def test_count_bound(self, rng):
        frame = tiny_frame(8, 16)
        comb = combination_by_name("comb_0")
        detections = {}
        for kind in comb.kinds:
            n = int(rng.integers(1, 12))
            coords = [
                (int(rng.integers(0, 16 * kind.scale)), int(rng.integers(0, 8 * kind.scale)))
                for _ in range(n)
            ]
            detections[kind] = _detections(
                coords, rng.integers(0, 256, size=(n, 32)).astype(np.uint8)
            )
        out = sample(frame, comb, detections, TrackState())
        assert len(out) <= sum(len(d) for d in detections.values())
        assert np.all(np.diff(out.indices) > 0)
        assert np.all(frame.cloud.valid[out.indices])

    def test_missing_variant_rejected(self, rng):
        frame = tiny_frame()
        comb = combination_by_name("comb_0")
        with pytest.raises(TrackingError, match="missing detections"):
            sample(frame, comb, {}, TrackState())

    def test_sampled_cloud_validation(self):
        with pytest.raises(TrackingError):
            SampledCloud(np.array([3, 1]), np.zeros((2, 3), dtype=np.float32))

    def test_keypoints_to_indices_bounds(self):
        kps = [Keypoint(15.9, 7.9, 1.0), Keypoint(0.0, 0.0, 1.0)]
        idx = keypoints_to_indices(kps, 1, 16, 8)
        assert idx == {0, 7 * 16 + 15}
