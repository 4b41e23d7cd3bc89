"""Image preprocessing: gamma compensation for range images, and
threshold-gated CLAHE + gamma for signal images.

Signal images from spinning lidar are unevenly exposed: retroreflective
targets saturate while most of the scene stays dark. Bright pixels (>=
p_thresh) are kept as-is; everything below gets contrast-limited adaptive
histogram equalization followed by a gamma lift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GrayImage


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    gamma: float = 0.5
    p_thresh: int = 240
    clahe_clip: float = 2.0
    clahe_tiles: tuple[int, int] = (8, 8)

    def __post_init__(self):
        if self.gamma <= 0:
            raise PreprocessError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.p_thresh <= 255:
            raise PreprocessError(f"p_thresh must be in (0, 255], got {self.p_thresh}")
        if self.clahe_clip < 1.0:
            raise PreprocessError(f"clip limit must be >= 1, got {self.clahe_clip}")
        ty, tx = self.clahe_tiles
        if ty < 1 or tx < 1:
            raise PreprocessError(f"tile grid must be >= 1x1, got {self.clahe_tiles}")


def _require_8bit(img: GrayImage) -> np.ndarray:
    if not img.is_8bit:
        raise PreprocessError("preprocessing expects an 8-bit image; normalize first")
    return img.data


def gamma_lut(gamma: float) -> np.ndarray:
    """255 * (v/255)^gamma for v in 0..255, rounded half-up."""
    v = np.arange(256, dtype=np.float64) / 255.0
    return np.floor(255.0 * np.power(v, gamma) + 0.5).astype(np.uint8)


def gamma_correct(img: GrayImage, gamma: float) -> GrayImage:
    if gamma <= 0:
        raise PreprocessError(f"gamma must be > 0, got {gamma}")
    data = _require_8bit(img)
    return GrayImage(gamma_lut(gamma)[data])


def clahe_tile_mappings(
    img: np.ndarray, clip: float, tiles: tuple[int, int]
) -> tuple[np.ndarray, tuple[int, int]]:
    """Per-tile intensity mappings for CLAHE.

    Returns (mappings, (tile_h, tile_w)) where mappings has shape
    (ty, tx, 256). The image is edge-padded so every tile has equal size.
    Histograms are clipped at clip * N / 256 counts; the excess is spread
    uniformly over all bins (remainder to the lowest bins).
    """
    ty, tx = tiles
    h, w = img.shape
    tile_h = math.ceil(h / ty)
    tile_w = math.ceil(w / tx)
    padded = np.pad(img, ((0, ty * tile_h - h), (0, tx * tile_w - w)), mode="edge")
    n = tile_h * tile_w

    # (ty, tx, tile_h, tile_w) view, then one histogram per tile
    blocks = padded.reshape(ty, tile_h, tx, tile_w).transpose(0, 2, 1, 3)
    flat = blocks.reshape(ty * tx, n)
    hist = np.zeros((ty * tx, 256), dtype=np.int64)
    for i in range(ty * tx):
        hist[i] = np.bincount(flat[i], minlength=256)

    if math.isfinite(clip):
        limit = max(1, int(clip * n / 256.0))
        excess = np.maximum(hist - limit, 0).sum(axis=1)
        hist = np.minimum(hist, limit)
        hist += (excess // 256)[:, None]
        rem = excess % 256
        for i in range(ty * tx):
            hist[i, : rem[i]] += 1

    cdf = np.cumsum(hist, axis=1)
    mapping = np.floor(cdf * (255.0 / n) + 0.5).astype(np.uint8)
    return mapping.reshape(ty, tx, 256), (tile_h, tile_w)


def clahe(img: GrayImage, clip: float = 2.0, tiles: tuple[int, int] = (8, 8)) -> GrayImage:
    """Contrast-limited adaptive histogram equalization.

    Tile mappings are blended with bilinear interpolation between tile
    centers; pixels outside the outermost centers use the edge tile.
    """
    data = _require_8bit(img)
    ty, tx = tiles
    h, w = data.shape
    if h < ty or w < tx:
        raise PreprocessError(f"image {h}x{w} smaller than tile grid {ty}x{tx}")

    mapping, (tile_h, tile_w) = clahe_tile_mappings(data, clip, tiles)

    gy = (np.arange(h) + 0.5) / tile_h - 0.5
    gx = (np.arange(w) + 0.5) / tile_w - 0.5
    i0 = np.floor(gy).astype(np.int64)
    j0 = np.floor(gx).astype(np.int64)
    fy = (gy - i0)[:, None]
    fx = (gx - j0)[None, :]
    i0c = np.clip(i0, 0, ty - 1)
    i1c = np.clip(i0 + 1, 0, ty - 1)
    j0c = np.clip(j0, 0, tx - 1)
    j1c = np.clip(j0 + 1, 0, tx - 1)

    m00 = mapping[i0c[:, None], j0c[None, :], data].astype(np.float64)
    m01 = mapping[i0c[:, None], j1c[None, :], data].astype(np.float64)
    m10 = mapping[i1c[:, None], j0c[None, :], data].astype(np.float64)
    m11 = mapping[i1c[:, None], j1c[None, :], data].astype(np.float64)

    out = (1 - fy) * ((1 - fx) * m00 + fx * m01) + fy * ((1 - fx) * m10 + fx * m11)
    return GrayImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def preprocess_range(rng: GrayImage, cfg: PreprocessConfig) -> GrayImage:
    """Range images only need a brightness lift."""
    return gamma_correct(rng, cfg.gamma)


def preprocess_signal(sig: GrayImage, cfg: PreprocessConfig) -> GrayImage:
    """Pixels >= p_thresh pass through; the rest are replaced by
    gamma(CLAHE(img)) at the same location.

    CLAHE runs over the full image so tile histograms are not shaped by
    the bright-pixel mask.
    """
    data = _require_8bit(sig)
    enhanced = gamma_correct(clahe(sig, cfg.clahe_clip, cfg.clahe_tiles), cfg.gamma)
    out = data.copy()
    below = data < cfg.p_thresh
    out[below] = enhanced.data[below]
    return GrayImage(out)
