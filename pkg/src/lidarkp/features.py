"""Keypoint detection and description on image variants.

Built-in detector: FAST-9 corners scored by clipped contrast sum, greedy
non-max suppression, BRIEF-256 binary descriptors sampled on a Gaussian
pre-smoothed image. A Shi-Tomasi response is selectable as an alternative
corner criterion. Neural detectors attach as external commands that read
a PNG on stdin and emit one `x y score d0 ... d127` line per keypoint.

RGB variants are processed per color channel; results are concatenated
and deduplicated by integer pixel cell, keeping the strongest response.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

from .core import GrayImage, ImageVariant, RgbImage
from .external import ExternalToolError, run_tool
from .pngio import encode_png


class FeatureError(RuntimeError):
    pass


class DetectorKind(str, Enum):
    BUILTIN_FAST_BRIEF = "builtin_fast_brief"
    BUILTIN_SHI_TOMASI_BRIEF = "builtin_shi_tomasi_brief"
    EXTERNAL = "external"


@dataclass(frozen=True)
class DetectorSpec:
    kind: DetectorKind = DetectorKind.BUILTIN_FAST_BRIEF
    fast_threshold: int = 20
    max_keypoints: int = 500
    nms_radius: float = 4.0
    st_quality: float = 0.01
    command: str | None = None
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.fast_threshold <= 0:
            raise FeatureError(f"fast threshold must be positive, got {self.fast_threshold}")
        if self.max_keypoints < 1:
            raise FeatureError(f"max keypoints must be >= 1, got {self.max_keypoints}")
        if self.nms_radius < 0:
            raise FeatureError(f"nms radius must be >= 0, got {self.nms_radius}")
        if self.kind == DetectorKind.EXTERNAL and not (self.command and self.command.strip()):
            raise FeatureError("external detector needs a non-empty command")


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    score: float
    channel: int = 0


@dataclass
class Detections:
    """Parallel keypoint list and descriptor matrix for one variant image."""

    keypoints: list[Keypoint] = field(default_factory=list)
    descriptors: np.ndarray = field(default_factory=lambda: np.zeros((0, 32), dtype=np.uint8))
    descriptor_kind: str = "binary"  # "binary" (uint8 bit-packed) or "float"

    def __len__(self) -> int:
        return len(self.keypoints)


# FAST ring: 16 Bresenham-circle offsets (dx, dy) in circular order.
FAST_OFFSETS = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)
FAST_ARC = 9
BRIEF_BITS = 256
BRIEF_MARGIN = 16
BRIEF_SIGMA = 1.4


def _make_brief_pattern() -> np.ndarray:
    # 256 point pairs, isotropic Gaussian (sigma = patch/5), clipped to the
    # 31x31 patch. Pairs comparing a point with itself carry no signal and
    # are resampled. The seed is part of the descriptor definition.
    rng = np.random.default_rng(2463534242)
    pts = np.clip(np.round(rng.normal(0.0, 6.2, size=(BRIEF_BITS, 4))), -15, 15).astype(np.int64)
    degenerate = (pts[:, 0] == pts[:, 2]) & (pts[:, 1] == pts[:, 3])
    while degenerate.any():
        n = int(degenerate.sum())
        pts[degenerate] = np.clip(np.round(rng.normal(0.0, 6.2, size=(n, 4))), -15, 15)
        degenerate = (pts[:, 0] == pts[:, 2]) & (pts[:, 1] == pts[:, 3])
    return pts


BRIEF_PATTERN: np.ndarray = _make_brief_pattern()


def fast_response(data: np.ndarray, threshold: int) -> tuple[np.ndarray, np.ndarray]:
    """FAST-9 corner mask and score over a full image.

    A pixel is a corner when >= 9 contiguous ring pixels are all brighter
    than center+threshold or all darker than center-threshold. The score
    is the larger one-sided sum of contrast beyond the threshold.
    """
    img = data.astype(np.int32)
    h, w = img.shape
    mask = np.zeros((h, w), dtype=bool)
    score = np.zeros((h, w), dtype=np.float64)
    if h < 7 or w < 7:
        return mask, score

    center = img[3 : h - 3, 3 : w - 3]
    ring = np.stack(
        [img[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx] for dx, dy in FAST_OFFSETS]
    )
    brighter = ring > center[None] + threshold
    darker = ring < center[None] - threshold

    def has_arc(flags: np.ndarray) -> np.ndarray:
        ext = np.concatenate([flags, flags[: FAST_ARC - 1]], axis=0).astype(np.int16)
        csum = np.concatenate([np.zeros((1,) + flags.shape[1:], np.int16), np.cumsum(ext, 0)])
        windows = csum[FAST_ARC : FAST_ARC + 16] - csum[0:16]
        return (windows == FAST_ARC).any(axis=0)

    corner = has_arc(brighter) | has_arc(darker)
    up = np.where(brighter, ring - center[None] - threshold, 0).sum(axis=0)
    down = np.where(darker, center[None] - ring - threshold, 0).sum(axis=0)
    mask[3 : h - 3, 3 : w - 3] = corner
    score[3 : h - 3, 3 : w - 3] = np.where(corner, np.maximum(up, down), 0.0)
    return mask, score


def shi_tomasi_response(data: np.ndarray, quality: float) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-eigenvalue corner response with a relative quality gate."""
    img = data.astype(np.float64)
    ix = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    iy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    ixx = ndimage.gaussian_filter(ix * ix, 1.5, mode="nearest")
    iyy = ndimage.gaussian_filter(iy * iy, 1.5, mode="nearest")
    ixy = ndimage.gaussian_filter(ix * iy, 1.5, mode="nearest")
    half_tr = 0.5 * (ixx + iyy)
    root = np.sqrt(np.maximum(0.25 * (ixx - iyy) ** 2 + ixy**2, 0.0))
    resp = half_tr - root
    peak = float(resp.max())
    mask = resp > max(quality * peak, 0.0) if peak > 0 else np.zeros_like(resp, bool)
    return mask, np.where(mask, resp, 0.0)


def _greedy_nms(xs: np.ndarray, ys: np.ndarray, scores: np.ndarray, radius: float) -> np.ndarray:
    """Keep strongest keypoints first; drop anything within radius of a
    kept one. Order canonicalized by (score desc, y, x)."""
    order = np.lexsort((xs, ys, -scores))
    if radius <= 0:
        return order
    cell = max(radius, 1.0)
    r2 = radius * radius
    grid: dict[tuple[int, int], list[int]] = {}
    kept: list[int] = []
    for idx in order:
        x, y = xs[idx], ys[idx]
        cx, cy = int(x // cell), int(y // cell)
        ok = True
        for gx in (cx - 1, cx, cx + 1):
            for gy in (cy - 1, cy, cy + 1):
                for j in grid.get((gx, gy), ()):
                    if (x - xs[j]) ** 2 + (y - ys[j]) ** 2 <= r2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            kept.append(idx)
            grid.setdefault((cx, cy), []).append(idx)
    return np.asarray(kept, dtype=np.int64)


def smooth_for_brief(data: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(data.astype(np.float64), BRIEF_SIGMA, mode="nearest")


def brief_descriptors(smoothed: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bit-packed BRIEF-256 for integer keypoint coordinates on an already
    smoothed image. Bit k is set when patch point a_k is dimmer than b_k."""
    ax, ay, bx, by = BRIEF_PATTERN.T
    pa = smoothed[ys[:, None] + ay[None, :], xs[:, None] + ax[None, :]]
    pb = smoothed[ys[:, None] + by[None, :], xs[:, None] + bx[None, :]]
    return np.packbits(pa < pb, axis=1)


def describe_brief(img: GrayImage, kp: Keypoint) -> np.ndarray:
    """Descriptor for a single keypoint; it must respect the border margin."""
    x, y = int(round(kp.x)), int(round(kp.y))
    if not (
        BRIEF_MARGIN <= x < img.width - BRIEF_MARGIN
        and BRIEF_MARGIN <= y < img.height - BRIEF_MARGIN
    ):
        raise FeatureError(f"keypoint ({x}, {y}) violates the {BRIEF_MARGIN}px border margin")
    smoothed = smooth_for_brief(img.data)
    return brief_descriptors(smoothed, np.array([x]), np.array([y]))[0]


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.unpackbits(np.bitwise_xor(a, b)).sum())


def _detect_channel(data: np.ndarray, spec: DetectorSpec, channel: int) -> Detections:
    if spec.kind == DetectorKind.BUILTIN_FAST_BRIEF:
        mask, score = fast_response(data, spec.fast_threshold)
    else:
        mask, score = shi_tomasi_response(data, spec.st_quality)

    h, w = data.shape
    ys, xs = np.nonzero(mask)
    margin_ok = (
        (xs >= BRIEF_MARGIN) & (xs < w - BRIEF_MARGIN)
        & (ys >= BRIEF_MARGIN) & (ys < h - BRIEF_MARGIN)
    )
    xs, ys = xs[margin_ok], ys[margin_ok]
    if xs.size == 0:
        return Detections([], np.zeros((0, 32), np.uint8), "binary")
    sc = score[ys, xs]
    keep = _greedy_nms(xs.astype(np.float64), ys.astype(np.float64), sc, spec.nms_radius)
    keep = keep[: spec.max_keypoints]
    xs, ys, sc = xs[keep], ys[keep], sc[keep]

    desc = brief_descriptors(smooth_for_brief(data), xs, ys)
    kps = [Keypoint(float(x), float(y), float(s), channel) for x, y, s in zip(xs, ys, sc)]
    return Detections(kps, desc, "binary")


def _dedup_and_sort(kps: list[Keypoint], desc: np.ndarray, kind: str) -> Detections:
    if not kps:
        return Detections([], desc[:0], kind)
    # strongest keypoint wins each integer pixel cell; ties broken by
    # (y, x, channel) for determinism
    order = sorted(
        range(len(kps)), key=lambda i: (-kps[i].score, kps[i].y, kps[i].x, kps[i].channel)
    )
    seen: set[tuple[int, int]] = set()
    chosen: list[int] = []
    for i in order:
        cell = (int(round(kps[i].x)), int(round(kps[i].y)))
        if cell in seen:
            continue
        seen.add(cell)
        chosen.append(i)
    return Detections([kps[i] for i in chosen], desc[chosen], kind)


def _detect_external(variant: ImageVariant, spec: DetectorSpec) -> Detections:
    payload = encode_png(variant.image.data)
    try:
        raw = run_tool(spec.command, payload, spec.timeout_s)
    except ExternalToolError as exc:
        raise FeatureError(str(exc)) from exc

    kps: list[Keypoint] = []
    rows: list[np.ndarray] = []
    dim = None
    for lineno, line in enumerate(raw.decode(errors="replace").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 4:
            raise FeatureError(f"external detector line {lineno}: expected x y score d0...")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise FeatureError(f"external detector line {lineno}: non-numeric field") from exc
        x, y, score = vals[0], vals[1], vals[2]
        d = np.asarray(vals[3:], dtype=np.float32)
        if dim is None:
            dim = d.size
        elif d.size != dim:
            raise FeatureError(
                f"external detector line {lineno}: descriptor length {d.size} != {dim}"
            )
        if not (0 <= x < variant.image.width and 0 <= y < variant.image.height):
            raise FeatureError(f"external detector line {lineno}: keypoint out of bounds")
        kps.append(Keypoint(x, y, score, 0))
        rows.append(d)
    desc = np.vstack(rows) if rows else np.zeros((0, 128), np.float32)
    return _dedup_and_sort(kps, desc, "float")


def detect(variant: ImageVariant, spec: DetectorSpec) -> Detections:
    """Detect keypoints with descriptors on a variant image.

    Three-channel variants are processed channel by channel and merged;
    no two returned keypoints share an integer pixel cell.
    """
    if spec.kind == DetectorKind.EXTERNAL:
        return _detect_external(variant, spec)

    if isinstance(variant.image, RgbImage):
        channels = [variant.image.data[:, :, i] for i in range(3)]
    else:
        channels = [variant.image.data]

    all_kps: list[Keypoint] = []
    all_desc: list[np.ndarray] = []
    for ch, data in enumerate(channels):
        det = _detect_channel(data, spec, ch)
        all_kps.extend(det.keypoints)
        all_desc.append(det.descriptors)
    desc = np.vstack(all_desc) if all_desc else np.zeros((0, 32), np.uint8)
    return _dedup_and_sort(all_kps, desc, "binary")
