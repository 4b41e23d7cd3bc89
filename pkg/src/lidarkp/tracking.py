"""Cross-frame keypoint tracking and keypoint-to-point sampling.

Keypoints survive only if they mutually nearest-neighbor match against the
previous frame of the same variant stream. Survivors are mapped back to
source pixels (scale-aware) and then to point indices; the union over a
combination's variants is the sampled cloud fed to odometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import LidarFrame, VariantKind, pixel_to_point_index, variant_to_source_pixel
from .features import Detections, Keypoint


class TrackingError(ValueError):
    pass


@dataclass(frozen=True)
class Combination:
    name: str
    kinds: tuple[VariantKind, ...]


_COMBINATION_TABLE: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("comb_0", ("rng", "sig", "sig_2r")),
    ("comb_1", ("rng", "sig", "sig_c")),
    ("comb_2", ("rng", "sig", "sig_2r_c")),
    ("comb_3", ("rng", "sig", "sig_c", "sig_2r", "sig_2r_c")),
    ("comb_4", ("rng", "rng_2r", "sig", "sig_c", "sig_2r", "sig_2r_c")),
    ("comb_5", ("rng", "rng_2r", "sig_2r", "sig_2r_c")),
    ("comb_6", ("rng", "rng_2r", "sig", "sig_2r_c")),
)


def builtin_combinations() -> list[Combination]:
    return [
        Combination(name, tuple(VariantKind(k) for k in kinds))
        for name, kinds in _COMBINATION_TABLE
    ]


def combination_by_name(name: str) -> Combination:
    for comb in builtin_combinations():
        if comb.name == name:
            return comb
    raise TrackingError(f"unknown combination {name!r}; expected comb_0..comb_6")


_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(1).astype(np.int32)


def descriptor_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise distance matrix: Hamming for bit-packed uint8 descriptors,
    Euclidean for real-valued ones."""
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise TrackingError(f"descriptor shapes {a.shape} and {b.shape} do not agree")
    if (a.dtype == np.uint8) != (b.dtype == np.uint8):
        raise TrackingError("cannot match binary descriptors against float descriptors")
    if a.dtype == np.uint8:
        xor = np.bitwise_xor(a[:, None, :], b[None, :, :])
        return _POPCOUNT[xor].sum(axis=2).astype(np.float64)
    diff = a.astype(np.float64)[:, None, :] - b.astype(np.float64)[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def mnn_match(desc_prev: np.ndarray, desc_curr: np.ndarray) -> list[tuple[int, int]]:
    """Mutual nearest neighbor matching.

    (i, j) is returned iff j is i's nearest descriptor in curr and i is
    j's nearest in prev. Ties resolve to the lowest index.
    """
    desc_prev, desc_curr = np.asarray(desc_prev), np.asarray(desc_curr)
    if desc_prev.shape[0] == 0 or desc_curr.shape[0] == 0:
        return []
    dist = descriptor_distances(desc_prev, desc_curr)
    fwd = dist.argmin(axis=1)  # argmin takes the first minimum: lowest index
    bwd = dist.argmin(axis=0)
    return [(int(i), int(j)) for i, j in enumerate(fwd) if bwd[j] == i]


@dataclass
class TrackState:
    """Previous-frame detections, one slot per variant stream."""

    previous: dict[VariantKind, Detections] = field(default_factory=dict)

    def reset(self) -> None:
        self.previous.clear()


def track(
    kind: VariantKind,
    current: Detections,
    state: TrackState,
    max_distance: float | None = None,
) -> Detections:
    """Return the matched subset of the current detections.

    The first frame of a stream bootstraps: everything passes through.
    State always advances to the full current detections.
    """
    prev = state.previous.get(kind)
    state.previous[kind] = current
    if prev is None:
        return current
    pairs = mnn_match(prev.descriptors, current.descriptors)
    if max_distance is not None and pairs:
        keep = []
        for i, j in pairs:
            d = descriptor_distances(prev.descriptors[i : i + 1], current.descriptors[j : j + 1])
            if float(d[0, 0]) <= max_distance:
                keep.append((i, j))
        pairs = keep
    idx = [j for _, j in pairs]
    return Detections(
        [current.keypoints[j] for j in idx],
        current.descriptors[idx] if idx else current.descriptors[:0],
        current.descriptor_kind,
    )


@dataclass(frozen=True)
class SampledCloud:
    """Point indices selected from one frame, with their 3-D points."""

    indices: np.ndarray  # sorted unique int64
    points: np.ndarray  # (K, 3) float32

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        pts = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        if idx.shape[0] != pts.shape[0]:
            raise TrackingError("indices and points disagree in length")
        if idx.size and np.any(np.diff(idx) <= 0):
            raise TrackingError("indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return int(self.indices.shape[0])


def keypoints_to_indices(
    keypoints: list[Keypoint], scale: int, width: int, height: int
) -> set[int]:
    """Map variant keypoints to source-frame point indices."""
    out: set[int] = set()
    for kp in keypoints:
        r, c = variant_to_source_pixel(kp.x, kp.y, scale)
        if 0 <= r < height and 0 <= c < width:
            out.add(pixel_to_point_index(r, c, width, height))
    return out


def sample(
    frame: LidarFrame,
    combination: Combination,
    detections: dict[VariantKind, Detections],
    state: TrackState,
    max_distance: float | None = None,
) -> SampledCloud:
    """Track each variant stream, map survivors to point indices, and take
    the union across the combination. Invalid (zero-range) points are
    dropped."""
    missing = [k.value for k in combination.kinds if k not in detections]
    if missing:
        raise TrackingError(f"combination {combination.name} missing detections for {missing}")

    union: set[int] = set()
    for kind in combination.kinds:
        matched = track(kind, detections[kind], state, max_distance)
        union |= keypoints_to_indices(matched.keypoints, kind.scale, frame.width, frame.height)

    valid = frame.cloud.valid
    idx = np.asarray(sorted(i for i in union if valid[i]), dtype=np.int64)
    return SampledCloud(idx, frame.cloud.points[idx])
