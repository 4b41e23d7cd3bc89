"""PNG encode/decode helpers shared by ingest and the external adapters."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


class PngError(ValueError):
    pass


def encode_png(arr: np.ndarray) -> bytes:
    """Encode uint8 gray, uint16 gray, or uint8 RGB to PNG bytes."""
    arr = np.asarray(arr)
    if arr.ndim == 2 and arr.dtype in (np.uint8, np.uint16):
        im = Image.fromarray(arr)
    elif arr.ndim == 3 and arr.shape[2] == 3 and arr.dtype == np.uint8:
        im = Image.fromarray(arr, mode="RGB")
    else:
        raise PngError(f"unsupported array for PNG: shape {arr.shape}, dtype {arr.dtype}")
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes to uint8 gray, uint16 gray, or uint8 RGB array."""
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except Exception as exc:
        raise PngError(f"cannot decode PNG: {exc}") from exc
    if im.mode in ("I;16", "I;16B", "I"):
        arr = np.asarray(im, dtype=np.uint16 if im.mode.startswith("I;16") else np.int32)
        if arr.dtype != np.uint16:
            arr = np.clip(arr, 0, 65535).astype(np.uint16)
        return arr
    if im.mode == "L":
        return np.asarray(im, dtype=np.uint8)
    if im.mode in ("RGB", "RGBA", "P", "LA"):
        return np.asarray(im.convert("RGB"), dtype=np.uint8)
    raise PngError(f"unsupported PNG mode {im.mode}")


def write_png(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_png(arr))


def read_png(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_png(f.read())
