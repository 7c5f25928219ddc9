"""Raster: the in-memory pixel buffer passed between pipeline stages.

A raster is a row-major (height, width, channels) array with 1 channel
(mask / gray) or 3 channels (sRGB). Depth is either 8-bit unsigned or a
normalized real in [0, 1]. Mask rasters carry integer labels only.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DecodeError

_FLOAT_DTYPES = (np.float32, np.float64)


@dataclass(frozen=True)
class Raster:
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = self.data
        if arr.ndim == 2:
            arr = arr[:, :, None]
            object.__setattr__(self, "data", arr)
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"raster must be (h, w, 1|3), got shape {arr.shape}")
        if arr.dtype == np.uint8:
            return
        if arr.dtype in _FLOAT_DTYPES:
            if arr.size and (float(arr.min()) < -1e-9 or float(arr.max()) > 1 + 1e-9):
                raise ValueError("float raster values must lie in [0, 1]")
            return
        raise ValueError(f"raster dtype must be uint8 or float, got {arr.dtype}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_float(self) -> np.ndarray:
        """Pixels as float64 in [0, 1], shape (h, w, c)."""
        if self.data.dtype == np.uint8:
            return self.data.astype(np.float64) / 255.0
        return self.data.astype(np.float64)

    def plane(self) -> np.ndarray:
        """Single-channel rasters as a 2-D array."""
        if self.channels != 1:
            raise ValueError("plane() requires a 1-channel raster")
        return self.data[:, :, 0]


def from_float(arr: np.ndarray, like_dtype: np.dtype) -> Raster:
    """Clip a float working buffer to [0, 1] and restore the caller's depth.

    Quantization to 8-bit happens here exactly once, round-half-to-even.
    """
    arr = np.clip(arr, 0.0, 1.0)
    if like_dtype == np.uint8:
        return Raster(np.rint(arr * 255.0).astype(np.uint8))
    return Raster(arr.astype(like_dtype))


def load_png(path: str | Path) -> Raster:
    """Decode a PNG into a Raster (RGB stays 3-channel, L/P become 1-channel)."""
    try:
        with Image.open(path) as img:
            if img.mode in ("1", "L", "P", "I", "I;16"):
                arr = np.asarray(img.convert("L") if img.mode != "L" else img)
            else:
                arr = np.asarray(img.convert("RGB"))
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return Raster(np.ascontiguousarray(arr, dtype=np.uint8))


def save_png(raster: Raster, path: str | Path) -> None:
    """Encode a Raster as lossless PNG."""
    if raster.data.dtype != np.uint8:
        raise ValueError("only 8-bit rasters are saved as PNG")
    arr = raster.data[:, :, 0] if raster.channels == 1 else raster.data
    Image.fromarray(arr).save(path, format="PNG")


def png_bytes(raster: Raster) -> bytes:
    """PNG encoding of a raster as bytes (used for hashing and atomic writes)."""
    if raster.data.dtype != np.uint8:
        raise ValueError("only 8-bit rasters are saved as PNG")
    arr = raster.data[:, :, 0] if raster.channels == 1 else raster.data
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_1bit(mask: Raster) -> bytes:
    """Binary mask as a true 1-bit PNG (audit artifacts stay tiny)."""
    plane = mask.plane()
    buf = io.BytesIO()
    Image.fromarray((plane > 0).astype(np.uint8) * 255).convert("1").save(buf, format="PNG")
    return buf.getvalue()
