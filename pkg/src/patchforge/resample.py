"""Resampling kernels and magnification arithmetic.

Bicubic here means separable cubic convolution with the Keys kernel
(a = -0.5), pixel-center alignment and edge clamping: output center j maps
to source coordinate (j + 0.5) * src/dst - 0.5. Work happens in float and
is quantized back to 8-bit once at the end (round-half-to-even).
"""
from __future__ import annotations

import numpy as np

from .errors import CropTooLarge, OutOfBounds
from .raster import Raster, from_float
from .slide import Slide, level_for_mpp, physical_extent_px, read_region

KEYS_A = -0.5


def cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Keys cubic convolution kernel with a = -0.5, support |t| < 2."""
    at = np.abs(np.asarray(t, dtype=np.float64))
    near = (1.5 * at - 2.5) * at * at + 1.0
    far = ((-0.5 * at + 2.5) * at - 4.0) * at + 2.0
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def _axis_taps(src: int, dst: int) -> tuple[np.ndarray, np.ndarray]:
    """Clamped source indices (dst, 4) and kernel weights (dst, 4) for one axis."""
    centers = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    base = np.floor(centers).astype(np.int64)
    offsets = np.arange(-1, 3, dtype=np.int64)
    taps = base[:, None] + offsets[None, :]
    weights = cubic_kernel(centers[:, None] - taps)
    return np.clip(taps, 0, src - 1), weights


def resize_bicubic_array(arr: np.ndarray, dst_h: int, dst_w: int) -> np.ndarray:
    """Bicubic resize of a float (h, w, c) array, no clipping.

    Shared by image resizing and positional-embedding interpolation; the
    caller decides whether to clip. Same-size axes pass through untouched.
    """
    if dst_h < 1 or dst_w < 1:
        raise ValueError("target dimensions must be >= 1")
    out = np.asarray(arr, dtype=np.float64)
    if out.shape[1] != dst_w:
        taps, weights = _axis_taps(out.shape[1], dst_w)
        out = np.einsum("hkwc,wk->hwc", out[:, taps.T, :], weights, optimize=True)
    if out.shape[0] != dst_h:
        taps, weights = _axis_taps(out.shape[0], dst_h)
        out = np.einsum("khwc,hk->hwc", out[taps.T, :, :], weights, optimize=True)
    return out


def bicubic_resize(img: Raster, dst_w: int, dst_h: int) -> Raster:
    """Resize a raster with Keys bicubic; output clipped to the valid range."""
    if img.width == dst_w and img.height == dst_h:
        return Raster(img.data.copy())
    out = resize_bicubic_array(img.to_float(), dst_h, dst_w)
    return from_float(out, img.data.dtype)


def nearest_resize(mask: Raster, dst_w: int, dst_h: int) -> Raster:
    """Nearest-neighbor resize; the output value set is a subset of the input's."""
    if dst_w < 1 or dst_h < 1:
        raise ValueError("target dimensions must be >= 1")
    src_h, src_w = mask.height, mask.width
    rows = np.minimum((np.arange(dst_h) + 0.5) * (src_h / dst_h), src_h - 1).astype(np.int64)
    cols = np.minimum((np.arange(dst_w) + 0.5) * (src_w / dst_w), src_w - 1).astype(np.int64)
    return Raster(np.ascontiguousarray(mask.data[rows[:, None], cols[None, :], :]))


def center_crop(img: Raster, size: int) -> Raster:
    """Central size x size window; offset = floor((dim - size) / 2) per axis."""
    if size > min(img.width, img.height):
        raise CropTooLarge(f"crop {size} exceeds image {img.width}x{img.height}")
    top = (img.height - size) // 2
    left = (img.width - size) // 2
    return Raster(np.ascontiguousarray(img.data[top:top + size, left:left + size, :]))


def effective_mpp(source_mpp: float, crop_px: int, out_px: int) -> float:
    """Physical resolution after cropping crop_px and resizing to out_px."""
    if source_mpp <= 0 or crop_px <= 0 or out_px <= 0:
        raise ValueError("effective_mpp arguments must be positive")
    return source_mpp * crop_px / out_px


def extract_normalized_patch(
    slide: Slide,
    x0_um: float,
    y0_um: float,
    scale_um: float,
    out_px: int,
) -> Raster:
    """Cut a physical square from the slide and normalize it to out_px.

    Reads the most economical pyramid level for the target resolution
    (scale_um / out_px), then bicubic-resizes. The resulting patch has
    MPP = scale_um / out_px by construction.
    """
    if scale_um <= 0 or out_px <= 0:
        raise ValueError("scale_um and out_px must be positive")
    width_um, height_um = slide.extent_um()
    eps = 1e-6
    if x0_um < -eps or y0_um < -eps:
        raise OutOfBounds(f"patch origin ({x0_um}, {y0_um}) outside slide")
    if x0_um + scale_um > width_um + eps or y0_um + scale_um > height_um + eps:
        raise OutOfBounds(
            f"{scale_um} um square at ({x0_um}, {y0_um}) exceeds slide extent "
            f"({width_um} x {height_um} um)"
        )
    choice = level_for_mpp(slide, scale_um / out_px)
    level = slide.levels[choice.level]
    mpp = level.mpp.mpp_x
    side_px = physical_extent_px(scale_um, mpp)
    # floor for position + round for extent keeps in-bounds squares in bounds
    x_px = min(int(np.floor(x0_um / mpp)), level.width_px - side_px)
    y_px = min(int(np.floor(y0_um / mpp)), level.height_px - side_px)
    region = read_region(slide, choice.level, max(x_px, 0), max(y_px, 0), side_px, side_px)
    return bicubic_resize(region, out_px, out_px)
