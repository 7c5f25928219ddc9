"""Tissue localization on a low-resolution pyramid level.

H&E tissue is darker than the white scanner background, so the detector
thresholds the luma histogram with Otsu's method, keeps the dark side,
cleans it with a 3x3 morphological open/close, and drops small specks.
Defaults (work_mpp 8 um/px, min component 64 px) are conventional
pathology-pipeline values and fully configurable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import NoTissue, OutOfBounds
from .raster import Raster
from .slide import MppSpec, Slide, level_for_mpp, read_region

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
_STRUCT_3X3 = np.ones((3, 3), dtype=bool)


class OtsuResult(NamedTuple):
    threshold: int
    degenerate: bool


def otsu_threshold(histogram: np.ndarray) -> OtsuResult:
    """Threshold maximizing inter-class variance over a 256-bin histogram.

    A cut at t assigns bins [0..t] to the dark class and (t..255] to the
    bright class; ties break toward the lower threshold. A histogram with
    all mass in one bin is degenerate: that bin is returned, flagged.
    """
    hist = np.asarray(histogram, dtype=np.float64)
    if hist.shape != (256,):
        raise ValueError("histogram must have 256 bins")
    if hist.sum() <= 0:
        raise ValueError("histogram must have positive total count")

    occupied = np.nonzero(hist)[0]
    if occupied.size == 1:
        return OtsuResult(int(occupied[0]), True)

    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    total = w0[-1]
    mass0 = np.cumsum(hist * levels)
    w1 = total - w0
    mu0 = np.divide(mass0, w0, out=np.zeros(256), where=w0 > 0)
    mu1 = np.divide(mass0[-1] - mass0, w1, out=np.zeros(256), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    return OtsuResult(int(np.argmax(between)), False)


@dataclass(frozen=True)
class TissueMask:
    mask: Raster           # binary, value set within {0, 1}
    level: int
    mpp: MppSpec

    def __post_init__(self) -> None:
        values = set(np.unique(self.mask.data))
        if not values <= {0, 1}:
            raise ValueError(f"tissue mask must be binary, found values {sorted(values)}")


def _luma(rgb: np.ndarray) -> np.ndarray:
    w = np.asarray(LUMA_WEIGHTS)
    return np.rint(rgb.astype(np.float64) @ w).astype(np.uint8)


def tissue_mask(slide: Slide, work_mpp: float = 8.0, min_component_px: int = 64) -> TissueMask:
    """Binary tissue map at the pyramid level closest to work_mpp.

    Raises NoTissue when nothing survives cleanup; a uniform image (Otsu
    degenerate) counts as background-only.
    """
    choice = level_for_mpp(slide, work_mpp)
    level = slide.levels[choice.level]
    rgb = read_region(slide, choice.level, 0, 0, level.width_px, level.height_px)
    if rgb.channels == 3:
        gray = _luma(rgb.data)
    else:
        gray = rgb.plane()

    hist = np.bincount(gray.ravel(), minlength=256)[:256]
    threshold, degenerate = otsu_threshold(hist)
    if degenerate:
        raise NoTissue(f"slide {slide.id}: uniform image at level {choice.level}")

    binary = gray <= threshold
    # edge-pad so the 3x3 morphology does not eat the image frame
    padded = np.pad(binary, 1, mode="edge")
    padded = ndimage.binary_opening(padded, structure=_STRUCT_3X3)
    padded = ndimage.binary_closing(padded, structure=_STRUCT_3X3)
    binary = padded[1:-1, 1:-1]

    if min_component_px > 1:
        labels, n = ndimage.label(binary, structure=_STRUCT_3X3)
        if n:
            sizes = np.bincount(labels.ravel())
            sizes[0] = 0
            binary = sizes[labels] >= min_component_px

    if not binary.any():
        raise NoTissue(f"slide {slide.id}: no tissue component >= {min_component_px} px")
    return TissueMask(Raster(binary.astype(np.uint8)[:, :, None]), choice.level, level.mpp)


def tissue_fraction(
    mask: TissueMask,
    x0_um: float,
    y0_um: float,
    w_um: float,
    h_um: float,
) -> float:
    """Fraction of the physical rectangle covered by tissue, on the mask's level."""
    if w_um <= 0 or h_um <= 0:
        raise ValueError("region extent must be positive")
    plane = mask.mask.plane()
    mh, mw = plane.shape
    mpp_x, mpp_y = mask.mpp.mpp_x, mask.mpp.mpp_y
    eps = 1e-6
    if x0_um < -eps or y0_um < -eps or x0_um + w_um > mw * mpp_x + eps or y0_um + h_um > mh * mpp_y + eps:
        raise OutOfBounds(
            f"region ({x0_um}, {y0_um}, {w_um}, {h_um}) um outside slide "
            f"({mw * mpp_x} x {mh * mpp_y} um)"
        )
    xs = max(0, int(round(x0_um / mpp_x)))
    ys = max(0, int(round(y0_um / mpp_y)))
    xe = min(mw, max(xs + 1, int(round((x0_um + w_um) / mpp_x))))
    ye = min(mh, max(ys + 1, int(round((y0_um + h_um) / mpp_y))))
    window = plane[ys:ye, xs:xe]
    return float(window.sum()) / window.size
