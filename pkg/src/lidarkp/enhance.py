"""Image enhancement back-ends: 2x super-resolution and colorization.

Built-in back-ends (bicubic upscale, fixed-colormap colorization) keep the
whole pipeline hermetic. Heavyweight neural models attach as external
commands speaking PNG-on-stdin / PNG-on-stdout.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import GrayImage, ImageVariant, LidarFrame, RgbImage, VariantKind, normalize_intensity
from .external import ExternalToolError, run_tool
from .pngio import decode_png, encode_png
from .preprocess import PreprocessConfig, preprocess_range, preprocess_signal


class EnhanceError(RuntimeError):
    pass


class EnhancerKind(str, Enum):
    BUILTIN_BICUBIC_SR = "builtin_bicubic_sr"
    BUILTIN_COLORMAP_COLOR = "builtin_colormap_color"
    EXTERNAL = "external"


@dataclass(frozen=True)
class EnhancerSpec:
    kind: EnhancerKind
    scale: int = 2
    command: str | None = None
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.kind == EnhancerKind.EXTERNAL and not (self.command and self.command.strip()):
            raise EnhanceError("external enhancer needs a non-empty command")
        if self.scale != 2:
            raise EnhanceError(f"super-resolution scale is fixed at 2, got {self.scale}")


def _cubic_weights(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    w = np.where(
        x <= 1.0,
        (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2.0, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
    )
    return w


def _upscale_axis_2x(arr: np.ndarray, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    s = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    base = np.floor(s).astype(np.int64)
    frac = s - base
    acc = None
    for k in (-1, 0, 1, 2):
        idx = np.clip(base + k, 0, n - 1)
        w = _cubic_weights(frac - k)
        taken = np.take(arr, idx, axis=axis)
        shape = [1] * taken.ndim
        shape[axis] = len(w)
        term = taken * w.reshape(shape)
        acc = term if acc is None else acc + term
    return acc


def bicubic_upscale_2x(data: np.ndarray) -> np.ndarray:
    """Separable bicubic (a=-0.5) 2x upscale with half-pixel-center
    alignment and edge clamping. Commutes with horizontal/vertical flips.
    """
    out = _upscale_axis_2x(data.astype(np.float64), axis=0)
    out = _upscale_axis_2x(out, axis=1)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


# Intensity-to-RGB lookup: every channel is monotone non-decreasing in the
# input, so any luminance weighting of the output is monotone as well.
def _build_colormap() -> np.ndarray:
    t = np.arange(256, dtype=np.float64) / 255.0
    r = np.floor(255.0 * np.sqrt(t) + 0.5)
    g = np.floor(255.0 * t**1.5 + 0.5)
    b = np.floor(255.0 * (0.5 - 0.5 * np.cos(np.pi * t)) + 0.5)
    return np.stack([r, g, b], axis=1).astype(np.uint8)


COLORMAP: np.ndarray = _build_colormap()


def super_resolve(img: GrayImage, spec: EnhancerSpec) -> GrayImage:
    """Upscale to exactly (2W, 2H)."""
    if spec.kind == EnhancerKind.BUILTIN_BICUBIC_SR:
        return GrayImage(bicubic_upscale_2x(img.data))
    if spec.kind != EnhancerKind.EXTERNAL:
        raise EnhanceError(f"{spec.kind.value} is not a super-resolution back-end")
    try:
        out = decode_png(run_tool(spec.command, encode_png(img.data), spec.timeout_s))
    except ExternalToolError as exc:
        raise EnhanceError(str(exc)) from exc
    if out.ndim == 3:
        out = out[:, :, 0]
    if out.shape != (2 * img.height, 2 * img.width):
        raise EnhanceError(
            f"external SR returned {out.shape}, expected {(2 * img.height, 2 * img.width)}"
        )
    if out.dtype != np.uint8:
        raise EnhanceError(f"external SR returned dtype {out.dtype}, expected uint8")
    return GrayImage(out)


def colorize(img: GrayImage, spec: EnhancerSpec) -> RgbImage:
    """Map one channel to three, same dimensions."""
    if spec.kind == EnhancerKind.BUILTIN_COLORMAP_COLOR:
        return RgbImage(COLORMAP[img.data])
    if spec.kind != EnhancerKind.EXTERNAL:
        raise EnhanceError(f"{spec.kind.value} is not a colorization back-end")
    try:
        out = decode_png(run_tool(spec.command, encode_png(img.data), spec.timeout_s))
    except ExternalToolError as exc:
        raise EnhanceError(str(exc)) from exc
    if out.ndim == 2:
        out = np.repeat(out[:, :, None], 3, axis=2)
    if out.shape != (img.height, img.width, 3):
        raise EnhanceError(
            f"external colorizer returned {out.shape}, expected {(img.height, img.width, 3)}"
        )
    if out.dtype != np.uint8:
        raise EnhanceError(f"external colorizer returned dtype {out.dtype}, expected uint8")
    return RgbImage(out)


@dataclass(frozen=True)
class EnhanceConfig:
    sr: EnhancerSpec = EnhancerSpec(EnhancerKind.BUILTIN_BICUBIC_SR)
    color: EnhancerSpec = EnhancerSpec(EnhancerKind.BUILTIN_COLORMAP_COLOR)
    normalize_percentile: float = 0.99


def build_variants(
    frame: LidarFrame,
    needed: set[VariantKind],
    enhance_cfg: EnhanceConfig | None = None,
    preprocess_cfg: PreprocessConfig | None = None,
) -> dict[VariantKind, ImageVariant]:
    """Build the requested variants for one frame.

    Preprocessing runs first; colorization of the upscaled signal is
    colorize(super_resolve(sig)), never the reverse. Shared intermediates
    (preprocessed images, upscaled signal) are computed once.
    """
    enhance_cfg = enhance_cfg or EnhanceConfig()
    preprocess_cfg = preprocess_cfg or PreprocessConfig()
    unknown = {k for k in needed if not isinstance(k, VariantKind)}
    if unknown:
        raise EnhanceError(f"unknown variant kinds: {unknown}")

    pct = enhance_cfg.normalize_percentile
    rng8 = frame.rng if frame.rng.is_8bit else normalize_intensity(frame.rng, pct)
    sig8 = frame.sig if frame.sig.is_8bit else normalize_intensity(frame.sig, pct)

    out: dict[VariantKind, ImageVariant] = {}
    rng_p = sig_p = sig_2r = None
    if needed & {VariantKind.RNG, VariantKind.RNG_2R}:
        rng_p = preprocess_range(rng8, preprocess_cfg)
    if needed & {VariantKind.SIG, VariantKind.SIG_2R, VariantKind.SIG_C, VariantKind.SIG_2R_C}:
        sig_p = preprocess_signal(sig8, preprocess_cfg)
    if needed & {VariantKind.SIG_2R, VariantKind.SIG_2R_C}:
        sig_2r = super_resolve(sig_p, enhance_cfg.sr)

    if VariantKind.RNG in needed:
        out[VariantKind.RNG] = ImageVariant(VariantKind.RNG, rng_p)
    if VariantKind.RNG_2R in needed:
        out[VariantKind.RNG_2R] = ImageVariant(
            VariantKind.RNG_2R, super_resolve(rng_p, enhance_cfg.sr)
        )
    if VariantKind.SIG in needed:
        out[VariantKind.SIG] = ImageVariant(VariantKind.SIG, sig_p)
    if VariantKind.SIG_2R in needed:
        out[VariantKind.SIG_2R] = ImageVariant(VariantKind.SIG_2R, sig_2r)
    if VariantKind.SIG_C in needed:
        out[VariantKind.SIG_C] = ImageVariant(
            VariantKind.SIG_C, colorize(sig_p, enhance_cfg.color)
        )
    if VariantKind.SIG_2R_C in needed:
        out[VariantKind.SIG_2R_C] = ImageVariant(
            VariantKind.SIG_2R_C, colorize(sig_2r, enhance_cfg.color)
        )
    return out
