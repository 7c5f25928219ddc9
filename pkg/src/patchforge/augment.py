"""Training augmentation suite and evaluation transforms.

The train pipeline applies, in order: a crop (RandomResizedCrop, or a plain
random crop in segmentation mode), color jitter, optional grayscale (only
in self-supervised runs), gaussian blur, horizontal flip, vertical flip,
then channel normalization. Every op draws its decisions from its own RNG
stream keyed by (seed, stream id, op name), so ablating one op never
shifts the randomness of the others.

Ops work in normalized float arithmetic. The public per-op functions
preserve the caller's raster depth (8-bit in, 8-bit out, quantized once);
``apply_train``/``apply_eval`` convert once and return float32 buffers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigConflict, CropTooLarge
from .raster import Raster, from_float
from .reference import EVAL_CROP_PX, EVAL_CROPPED_KINDS, PTCGA200_MEAN, PTCGA200_STD
from .resample import center_crop, resize_bicubic_array
from .rng import generator

OP_NAMES = ("crop", "color_jitter", "grayscale", "blur", "hflip", "vflip")
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugRng:
    """Root of the per-op RNG streams for one augmentation application."""

    seed: int
    stream: int | str = 0

    def op_stream(self, op: str) -> np.random.Generator:
        return generator(self.seed, "augment", self.stream, op)


@dataclass(frozen=True)
class AugmentConfig:
    out_px: int = 512
    rrc_scale_min: float = 0.2          # 0.8 for the Camelyon-derived set
    rrc_ratio: tuple[float, float] = (0.75, 4.0 / 3.0)
    jitter: tuple[float, float, float, float] = (0.4, 0.4, 0.4, 0.1)
    jitter_p: float = 0.8
    grayscale_p: float = 0.2
    ssl_mode: bool = False              # grayscale participates only in SSL runs
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    blur_p: float = 0.5
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    segmentation_mode: bool = False     # plain RandomCrop(out_px) replaces RRC
    mean: tuple[float, float, float] = PTCGA200_MEAN
    std: tuple[float, float, float] = PTCGA200_STD
    ablate: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        for name, p in (("jitter_p", self.jitter_p), ("grayscale_p", self.grayscale_p),
                        ("blur_p", self.blur_p), ("hflip_p", self.hflip_p),
                        ("vflip_p", self.vflip_p)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.blur_sigma[0] <= 0 or self.blur_sigma[1] < self.blur_sigma[0]:
            raise ValueError(f"invalid blur sigma range {self.blur_sigma}")
        if any(s <= 0 for s in self.std):
            raise ValueError("normalization std must be positive")
        if not 0 < self.rrc_scale_min <= 1:
            raise ValueError("rrc_scale_min must be in (0, 1]")
        unknown = set(self.ablate) - set(OP_NAMES)
        if unknown:
            raise ValueError(f"unknown ops in ablate: {sorted(unknown)}")


# --- color primitives ------------------------------------------------------ #

def _rgb_to_hsv(arr: np.ndarray) -> np.ndarray:
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    maxc = arr.max(axis=-1)
    minc = arr.min(axis=-1)
    c = maxc - minc
    s = np.where(maxc > 0, c / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe_c = np.where(c > 0, c, 1.0)
    rc = (maxc - r) / safe_c
    gc = (maxc - g) / safe_c
    bc = (maxc - b) / safe_c
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(c > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    sextant = i.astype(np.int64) % 6
    conds = [sextant == k for k in range(6)]
    r = np.select(conds, [v, q, p, p, t, v])
    g = np.select(conds, [t, v, v, q, p, p])
    b = np.select(conds, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def _hue_shift(arr: np.ndarray, turns: float) -> np.ndarray:
    hsv = _rgb_to_hsv(arr)
    hsv[..., 0] = (hsv[..., 0] + turns) % 1.0
    return _hsv_to_rgb(hsv)


def _grayscale_arr(arr: np.ndarray) -> np.ndarray:
    gray = arr @ _LUMA
    return np.repeat(gray[..., None], 3, axis=-1)


_JITTER_SUBOPS = ("brightness", "contrast", "saturation", "hue")


def _draw_jitter(params: tuple[float, float, float, float], gen: np.random.Generator):
    """Application order and factors; a zero-strength sub-op draws nothing."""
    order = [int(k) for k in gen.permutation(4)]
    factors: dict[str, float] = {}
    for name, strength in zip(_JITTER_SUBOPS, params):
        if strength <= 0:
            continue
        if name == "hue":
            factors[name] = float(gen.uniform(-strength, strength))
        else:
            factors[name] = float(gen.uniform(max(0.0, 1.0 - strength), 1.0 + strength))
    return order, factors


def _apply_jitter(arr: np.ndarray, order: list[int], factors: dict[str, float]) -> np.ndarray:
    for idx in order:
        name = _JITTER_SUBOPS[idx]
        if name not in factors:
            continue
        f = factors[name]
        if name == "brightness":
            arr = np.clip(arr * f, 0.0, 1.0)
        elif name == "contrast":
            level = float((arr @ _LUMA).mean())
            arr = np.clip(f * arr + (1.0 - f) * level, 0.0, 1.0)
        elif name == "saturation":
            gray = (arr @ _LUMA)[..., None]
            arr = np.clip(f * arr + (1.0 - f) * gray, 0.0, 1.0)
        else:
            arr = np.clip(_hue_shift(arr, f), 0.0, 1.0)
    return arr


# --- geometry primitives ---------------------------------------------------- #

def _draw_rrc_window(
    h: int, w: int, scale_min: float, ratio: tuple[float, float], gen: np.random.Generator
) -> tuple[int, int, int, int]:
    """(top, left, crop_h, crop_w): ten placement attempts, then center fallback."""
    log_lo, log_hi = math.log(ratio[0]), math.log(ratio[1])
    for _ in range(10):
        area = gen.uniform(scale_min, 1.0) * h * w
        aspect = math.exp(gen.uniform(log_lo, log_hi))
        cw = math.ceil(math.sqrt(area * aspect))
        ch = math.ceil(math.sqrt(area / aspect))
        if cw <= w and ch <= h:
            top = int(gen.integers(0, h - ch + 1))
            left = int(gen.integers(0, w - cw + 1))
            return top, left, ch, cw
    in_ratio = w / h
    if in_ratio < ratio[0]:
        cw, ch = w, min(h, round(w / ratio[0]))
    elif in_ratio > ratio[1]:
        cw, ch = min(w, round(h * ratio[1])), h
    else:
        cw, ch = w, h
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(4.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    return kernel / kernel.sum()


def _blur_arr(arr: np.ndarray, sigma: float) -> np.ndarray:
    kernel = _gaussian_kernel(sigma)
    out = ndimage.convolve1d(arr, kernel, axis=0, mode="nearest")
    return ndimage.convolve1d(out, kernel, axis=1, mode="nearest")


def hflip(img: Raster) -> Raster:
    return Raster(np.ascontiguousarray(img.data[:, ::-1, :]))


def vflip(img: Raster) -> Raster:
    return Raster(np.ascontiguousarray(img.data[::-1, :, :]))


# --- public per-op functions ------------------------------------------------ #

def random_resized_crop(
    img: Raster,
    out_px: int,
    scale_min: float,
    ratio: tuple[float, float],
    gen: np.random.Generator,
) -> Raster:
    """Crop a random area/aspect window and bicubic-resize it to out_px."""
    top, left, ch, cw = _draw_rrc_window(img.height, img.width, scale_min, ratio, gen)
    window = img.to_float()[top:top + ch, left:left + cw]
    return from_float(resize_bicubic_array(window, out_px, out_px), img.data.dtype)


def color_jitter(
    img: Raster,
    params: tuple[float, float, float, float],
    gen: np.random.Generator,
) -> Raster:
    """Brightness/contrast/saturation/hue perturbation in seeded random order."""
    if img.channels != 3:
        raise ValueError("color_jitter requires a 3-channel raster")
    order, factors = _draw_jitter(params, gen)
    if not factors:
        return Raster(img.data.copy())
    return from_float(_apply_jitter(img.to_float(), order, factors), img.data.dtype)


def random_grayscale(img: Raster, p: float, gen: np.random.Generator) -> Raster:
    """With probability p, replace channels by the luma-weighted gray."""
    if p > 0 and gen.random() < p:
        return from_float(_grayscale_arr(img.to_float()), img.data.dtype)
    return Raster(img.data.copy())


def gaussian_blur(
    img: Raster,
    sigma_range: tuple[float, float],
    p: float,
    gen: np.random.Generator,
) -> Raster:
    """With probability p, separable gaussian blur with sigma ~ U[range]."""
    if p > 0 and gen.random() < p:
        sigma = float(gen.uniform(*sigma_range))
        return from_float(_blur_arr(img.to_float(), sigma), img.data.dtype)
    return Raster(img.data.copy())


def normalize(arr: np.ndarray, mean, std) -> np.ndarray:
    """Per-channel (x - mean) / std, returned as float32."""
    out = (arr - np.asarray(mean, dtype=np.float64)) / np.asarray(std, dtype=np.float64)
    return out.astype(np.float32)


# --- pipelines --------------------------------------------------------------- #

def apply_train(
    img: Raster,
    mask: Raster | None,
    cfg: AugmentConfig,
    rng: AugRng,
    trace: dict | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Full training pipeline; returns (float32 HWC image, uint8 HW mask?).

    Geometric ops hit image and mask with identical parameters (mask via
    nearest); photometric ops touch the image only; normalization is last.
    """
    if (mask is not None) != cfg.segmentation_mode:
        raise ConfigConflict("mask must be present exactly when segmentation_mode is set")
    arr = img.to_float()
    mask_arr = mask.plane().copy() if mask is not None else None

    def enabled(op: str) -> bool:
        return op not in cfg.ablate

    if enabled("crop"):
        gen = rng.op_stream("crop")
        h, w = arr.shape[:2]
        if cfg.segmentation_mode:
            if cfg.out_px > min(h, w):
                raise CropTooLarge(f"random crop {cfg.out_px} exceeds input {w}x{h}")
            top = int(gen.integers(0, h - cfg.out_px + 1))
            left = int(gen.integers(0, w - cfg.out_px + 1))
            ch = cw = cfg.out_px
            arr = arr[top:top + ch, left:left + cw]
            mask_arr = mask_arr[top:top + ch, left:left + cw]
        else:
            top, left, ch, cw = _draw_rrc_window(h, w, cfg.rrc_scale_min, cfg.rrc_ratio, gen)
            arr = resize_bicubic_array(arr[top:top + ch, left:left + cw], cfg.out_px, cfg.out_px)
            arr = np.clip(arr, 0.0, 1.0)
        if trace is not None:
            trace["crop"] = {"top": top, "left": left, "h": ch, "w": cw}

    if enabled("color_jitter"):
        gen = rng.op_stream("color_jitter")
        applied = cfg.jitter_p > 0 and gen.random() < cfg.jitter_p
        if applied:
            order, factors = _draw_jitter(cfg.jitter, gen)
            arr = _apply_jitter(arr, order, factors)
        if trace is not None:
            trace["color_jitter"] = {
                "applied": applied,
                "order": order if applied else None,
                "factors": factors if applied else None,
            }

    if enabled("grayscale") and cfg.ssl_mode:
        gen = rng.op_stream("grayscale")
        applied = cfg.grayscale_p > 0 and gen.random() < cfg.grayscale_p
        if applied:
            arr = _grayscale_arr(arr)
        if trace is not None:
            trace["grayscale"] = {"applied": applied}

    if enabled("blur"):
        gen = rng.op_stream("blur")
        applied = cfg.blur_p > 0 and gen.random() < cfg.blur_p
        sigma = float(gen.uniform(*cfg.blur_sigma)) if applied else None
        if applied:
            arr = np.clip(_blur_arr(arr, sigma), 0.0, 1.0)
        if trace is not None:
            trace["blur"] = {"applied": applied, "sigma": sigma}

    for op, p, axis in (("hflip", cfg.hflip_p, 1), ("vflip", cfg.vflip_p, 0)):
        if not enabled(op):
            continue
        gen = rng.op_stream(op)
        applied = p > 0 and gen.random() < p
        if applied:
            arr = np.flip(arr, axis=axis)
            if mask_arr is not None:
                mask_arr = np.flip(mask_arr, axis=axis)
        if trace is not None:
            trace[op] = {"applied": applied}

    out = normalize(np.ascontiguousarray(arr), cfg.mean, cfg.std)
    if mask_arr is not None:
        mask_arr = np.ascontiguousarray(mask_arr)
    return out, mask_arr


def apply_eval(img: Raster, dataset_kind: str, mean, std) -> np.ndarray:
    """Evaluation transform: center crop for the classification kinds, then
    normalization; other kinds are normalized as-is."""
    if dataset_kind in EVAL_CROPPED_KINDS:
        img = center_crop(img, EVAL_CROP_PX)
    return normalize(img.to_float(), mean, std)
