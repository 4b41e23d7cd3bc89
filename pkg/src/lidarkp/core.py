"""Shared domain types: images, point clouds, frames, variants, poses.

All types are plain value objects around numpy arrays. Arrays are marked
read-only after construction so instances can be shared across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.transform import Rotation


class CoreError(ValueError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GrayImage:
    """Single-channel row-major image, uint8 after normalization.

    Raw sensor payloads may be uint16; call normalize_intensity() before
    feeding the image to any 8-bit stage.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2 or d.size == 0:
            raise CoreError(f"gray image must be non-empty 2-D, got shape {d.shape}")
        if d.dtype not in (np.uint8, np.uint16):
            raise CoreError(f"gray image dtype must be uint8/uint16, got {d.dtype}")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def is_8bit(self) -> bool:
        return self.data.dtype == np.uint8


@dataclass(frozen=True)
class RgbImage:
    """Three-channel row-major image, uint8, shape (H, W, 3)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3 or d.shape[2] != 3 or d.size == 0:
            raise CoreError(f"rgb image must be (H, W, 3), got shape {d.shape}")
        if d.dtype != np.uint8:
            raise CoreError(f"rgb image dtype must be uint8, got {d.dtype}")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def channel(self, i: int) -> GrayImage:
        return GrayImage(self.data[:, :, i].copy())


@dataclass(frozen=True)
class PointCloud:
    """One point per image pixel, row-major. Invalid returns are (0,0,0).

    valid[i] is False exactly where the sensor reported zero range.
    """

    points: np.ndarray  # (N, 3) float32
    valid: np.ndarray  # (N,) bool

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float32)
        v = np.asarray(self.valid, dtype=bool)
        if p.ndim != 2 or p.shape[1] != 3:
            raise CoreError(f"points must be (N, 3), got {p.shape}")
        if v.shape != (p.shape[0],):
            raise CoreError("validity mask length must match point count")
        object.__setattr__(self, "points", _freeze(p))
        object.__setattr__(self, "valid", _freeze(v))

    def __len__(self) -> int:
        return self.points.shape[0]

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]


@dataclass(frozen=True)
class LidarFrame:
    """One sweep: range image, signal image, cloud, all pixel-aligned.

    Pixel (r, c) corresponds to point index r * width + c.
    """

    timestamp: float
    rng: GrayImage
    sig: GrayImage
    cloud: PointCloud

    def __post_init__(self):
        if (self.rng.height, self.rng.width) != (self.sig.height, self.sig.width):
            raise CoreError("range and signal images must share dimensions")
        if len(self.cloud) != self.rng.height * self.rng.width:
            raise CoreError(
                f"cloud has {len(self.cloud)} points, expected "
                f"{self.rng.height * self.rng.width}"
            )

    @property
    def height(self) -> int:
        return self.rng.height

    @property
    def width(self) -> int:
        return self.rng.width


class VariantKind(str, Enum):
    RNG = "rng"
    SIG = "sig"
    RNG_2R = "rng_2r"
    SIG_2R = "sig_2r"
    SIG_C = "sig_c"
    SIG_2R_C = "sig_2r_c"

    @property
    def scale(self) -> int:
        return 2 if self in (VariantKind.RNG_2R, VariantKind.SIG_2R, VariantKind.SIG_2R_C) else 1

    @property
    def channels(self) -> int:
        return 3 if self in (VariantKind.SIG_C, VariantKind.SIG_2R_C) else 1


@dataclass(frozen=True)
class ImageVariant:
    """A named enhanced image derived from one frame's rng or sig channel."""

    kind: VariantKind
    image: GrayImage | RgbImage

    def __post_init__(self):
        channels = 3 if isinstance(self.image, RgbImage) else 1
        if channels != self.kind.channels:
            raise CoreError(
                f"variant {self.kind.value} needs {self.kind.channels} channel(s), "
                f"image has {channels}"
            )

    @property
    def scale(self) -> int:
        return self.kind.scale

    @property
    def channels(self) -> int:
        return self.kind.channels


@dataclass(frozen=True)
class Pose:
    """Rigid transform, stored as quaternion (x, y, z, w) + translation.

    The quaternion is kept verbatim as the canonical representation so
    that trajectory files survive load/save round trips bit-for-bit.
    """

    quat: np.ndarray  # (4,) x, y, z, w
    trans: np.ndarray  # (3,)
    timestamp: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=np.float64)
        t = np.asarray(self.trans, dtype=np.float64)
        if q.shape != (4,) or t.shape != (3,):
            raise CoreError("pose needs quat (4,) and trans (3,)")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > 1e-6:
            raise CoreError(f"quaternion norm {n} not unit within 1e-6")
        object.__setattr__(self, "quat", _freeze(q))
        object.__setattr__(self, "trans", _freeze(t))

    @classmethod
    def identity(cls, timestamp: float = 0.0) -> "Pose":
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3), timestamp)

    @classmethod
    def from_matrix(cls, mat: np.ndarray, timestamp: float = 0.0) -> "Pose":
        mat = np.asarray(mat, dtype=np.float64)
        check_rotation(mat[:3, :3])
        q = Rotation.from_matrix(mat[:3, :3]).as_quat()
        if q[3] < 0:  # canonical sign: qw >= 0
            q = -q
        return cls(q, mat[:3, 3], timestamp)

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = Rotation.from_quat(self.quat).as_matrix()
        mat[:3, 3] = self.trans
        return mat

    def rotation(self) -> np.ndarray:
        return Rotation.from_quat(self.quat).as_matrix()


def check_rotation(r: np.ndarray, tol: float = 1e-9) -> None:
    """Raise unless r is orthonormal with determinant +1 within tol."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise CoreError(f"rotation must be 3x3, got {r.shape}")
    if not np.allclose(r @ r.T, np.eye(3), atol=tol):
        raise CoreError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise CoreError("rotation determinant is not +1")


def pixel_to_point_index(r: int, c: int, width: int, height: int | None = None) -> int:
    """Row-major pixel to point index: r * width + c."""
    if r < 0 or c < 0 or c >= width or (height is not None and r >= height):
        raise CoreError(f"pixel ({r}, {c}) out of bounds for width {width}")
    return r * width + c


def variant_to_source_pixel(x: float, y: float, scale: int) -> tuple[int, int]:
    """Map a variant-image coordinate back to the source pixel (row, col).

    Convention for upscaled variants: the 2x2 output block {2r..2r+1} x
    {2c..2c+1} maps to source pixel (r, c).
    """
    if scale not in (1, 2):
        raise CoreError(f"scale must be 1 or 2, got {scale}")
    if x < 0 or y < 0:
        raise CoreError(f"negative variant coordinate ({x}, {y})")
    return int(np.floor(y / scale)), int(np.floor(x / scale))


def normalize_intensity(raw: np.ndarray | GrayImage, percentile: float = 0.99) -> GrayImage:
    """Linearly scale a raw (e.g. 16-bit) image so the given upper
    percentile maps to 255, clamping above. Deterministic.
    """
    if isinstance(raw, GrayImage):
        raw = raw.data
    raw = np.asarray(raw)
    if raw.ndim != 2 or raw.size == 0:
        raise CoreError("normalize_intensity needs a non-empty 2-D image")
    if not 0.0 < percentile <= 1.0:
        raise CoreError(f"percentile must be in (0, 1], got {percentile}")
    ref = float(np.quantile(raw.astype(np.float64), percentile))
    if ref <= 0.0:
        return GrayImage(np.zeros(raw.shape, dtype=np.uint8))
    scaled = np.floor(raw.astype(np.float64) * (255.0 / ref) + 0.5)
    return GrayImage(np.clip(scaled, 0, 255).astype(np.uint8))


def cloud_from_range(range_raw: np.ndarray, points: np.ndarray) -> PointCloud:
    """Build a PointCloud whose validity mask is the nonzero-range pixels."""
    valid = np.asarray(range_raw).reshape(-1) > 0
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3).copy()
    pts[~valid] = 0.0
    return PointCloud(pts, valid)
