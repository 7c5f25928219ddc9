"""Patch sampling: random per slide, or a systematic grid with overlap.

Coordinates are physical microns at level 0. Every sampler keys its RNG by
(seed, slide id) so the record set is identical for any worker count and
any slide processing order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

from .errors import (
    IllegalLabel,
    InsufficientPatches,
    InsufficientSlides,
    InsufficientTissue,
    MissingAnnotation,
)
from .raster import Raster
from .resample import nearest_resize
from .rng import generator
from .slide import Slide, level_for_mpp, physical_extent_px, read_region
from .tissue import TissueMask, tissue_fraction

SEG_LABELS = range(6)   # 0 background/unknown, 1 stroma, 2 benign, 3..5 Gleason


@dataclass(frozen=True)
class SampleSpec:
    mode: Literal["random", "grid"]
    scale_um: float
    out_px: int
    patches_per_slide: int = 0
    stride_um: float = 0.0
    tissue_tau: float = 0.5
    seed: int = 0
    max_attempts_factor: int = 100

    def __post_init__(self) -> None:
        if self.scale_um <= 0 or self.out_px <= 0:
            raise ValueError("scale_um and out_px must be positive")
        if not 0.0 <= self.tissue_tau <= 1.0:
            raise ValueError("tissue_tau must be in [0, 1]")
        if self.mode == "random":
            if self.patches_per_slide < 1:
                raise ValueError("random mode needs patches_per_slide >= 1")
            if self.max_attempts_factor < 1:
                raise ValueError("max_attempts_factor must be >= 1")
        elif self.mode == "grid":
            if not 0 < self.stride_um <= self.scale_um:
                raise ValueError("grid mode needs 0 < stride_um <= scale_um")
        else:
            raise ValueError(f"unknown sampling mode {self.mode!r}")


@dataclass
class PatchRecord:
    slide_id: str
    x0_um: float
    y0_um: float
    scale_um: float
    out_px: int
    label: str | None = None
    mask_ref: str | None = None
    split: str = "unassigned"
    metadata: dict[str, str] = field(default_factory=dict)

    def mpp(self) -> float:
        return self.scale_um / self.out_px


def _slide_metadata(slide: Slide) -> dict[str, str]:
    keys = ("organ", "provider", "isup", "slide_type", "origin")
    return {k: slide.metadata[k] for k in keys if k in slide.metadata}


def random_patches(slide: Slide, mask: TissueMask, spec: SampleSpec) -> list[PatchRecord]:
    """Exactly patches_per_slide uniform draws over the eligible area, each
    passing the tissue threshold; duplicates across draws are permitted."""
    assert spec.mode == "random"
    width_um, height_um = slide.extent_um()
    max_x = width_um - spec.scale_um
    max_y = height_um - spec.scale_um
    if max_x < 0 or max_y < 0:
        raise InsufficientTissue(
            f"slide {slide.id} smaller than the {spec.scale_um} um patch scale")

    gen = generator(spec.seed, "sample-random", slide.id)
    budget = spec.patches_per_slide * spec.max_attempts_factor
    records: list[PatchRecord] = []
    rejected = 0
    meta = _slide_metadata(slide)
    while len(records) < spec.patches_per_slide:
        x0 = float(gen.uniform(0.0, max_x)) if max_x > 0 else 0.0
        y0 = float(gen.uniform(0.0, max_y)) if max_y > 0 else 0.0
        if tissue_fraction(mask, x0, y0, spec.scale_um, spec.scale_um) >= spec.tissue_tau:
            records.append(PatchRecord(
                slide_id=slide.id, x0_um=x0, y0_um=y0,
                scale_um=spec.scale_um, out_px=spec.out_px, metadata=dict(meta)))
        else:
            rejected += 1
            if rejected >= budget:
                raise InsufficientTissue(
                    f"slide {slide.id}: {rejected} draws rejected at tau={spec.tissue_tau}")
    return records


def grid_axis_count(extent_um: float, scale_um: float, stride_um: float) -> int:
    """floor((extent - scale) / stride) + 1, with an epsilon for float noise."""
    span = extent_um - scale_um
    if span < -1e-6:
        return 0
    return int(np.floor(span / stride_um + 1e-9)) + 1


def grid_patches(slide: Slide, mask: TissueMask | None, spec: SampleSpec) -> list[PatchRecord]:
    """Row-major stride_um lattice of candidates, filtered by tissue fraction."""
    assert spec.mode == "grid"
    width_um, height_um = slide.extent_um()
    nx = grid_axis_count(width_um, spec.scale_um, spec.stride_um)
    ny = grid_axis_count(height_um, spec.scale_um, spec.stride_um)
    meta = _slide_metadata(slide)
    records: list[PatchRecord] = []
    for iy in range(ny):
        y0 = iy * spec.stride_um
        for ix in range(nx):
            x0 = ix * spec.stride_um
            if spec.tissue_tau > 0:
                if tissue_fraction(mask, x0, y0, spec.scale_um, spec.scale_um) < spec.tissue_tau:
                    continue
            records.append(PatchRecord(
                slide_id=slide.id, x0_um=x0, y0_um=y0,
                scale_um=spec.scale_um, out_px=spec.out_px, metadata=dict(meta)))
    return records


def assign_label_camelyon(
    record: PatchRecord,
    slide: Slide,
    annotation,
    annotation_tau: float = 1.0,
) -> str:
    """tumor | normal | reject.

    Tumor slides label a patch tumor only when annotation coverage reaches
    annotation_tau (default: full containment); normal slides are normal.
    """
    slide_type = slide.metadata.get("slide_type")
    if slide_type == "normal":
        return "normal"
    if slide_type != "tumor":
        raise ValueError(f"slide {slide.id} has slide_type {slide_type!r}")
    if annotation is None:
        raise MissingAnnotation(f"tumor slide {slide.id} has no annotation")
    coverage = annotation.coverage(record.x0_um, record.y0_um, record.scale_um, record.scale_um)
    return "tumor" if coverage >= annotation_tau - 1e-9 else "reject"


def co_crop_mask(mask_slide: Slide, record: PatchRecord) -> tuple[Raster, dict[int, int]]:
    """The record's physical square from the mask pyramid, nearest-resized.

    Returns the out_px mask and its per-label pixel counts; values outside
    the 0..5 label set raise IllegalLabel.
    """
    choice = level_for_mpp(mask_slide, record.scale_um / record.out_px)
    level = mask_slide.levels[choice.level]
    mpp = level.mpp.mpp_x
    side = physical_extent_px(record.scale_um, mpp)
    x_px = min(int(np.floor(record.x0_um / mpp)), level.width_px - side)
    y_px = min(int(np.floor(record.y0_um / mpp)), level.height_px - side)
    region = read_region(mask_slide, choice.level, max(x_px, 0), max(y_px, 0), side, side)
    if region.channels != 1:
        raise IllegalLabel(f"mask pyramid {mask_slide.id} is not single-channel")
    out = nearest_resize(region, record.out_px, record.out_px)
    values, counts = np.unique(out.data, return_counts=True)
    illegal = [int(v) for v in values if int(v) not in SEG_LABELS]
    if illegal:
        raise IllegalLabel(f"mask values {illegal} outside labels 0..5")
    return out, {int(v): int(c) for v, c in zip(values, counts)}


def tiny_subset(
    records: Iterable[PatchRecord],
    organs: Iterable[str],
    slides_per_organ: int,
    patches_per_slide: int,
    seed: int,
) -> list[PatchRecord]:
    """Class-balanced subset: per organ, a uniform choice of slides, then a
    uniform choice of patches per chosen slide. Deterministic in seed."""
    records = list(records)
    by_organ: dict[str, dict[str, list[PatchRecord]]] = {}
    for rec in records:
        organ = rec.metadata.get("organ", "")
        by_organ.setdefault(organ, {}).setdefault(rec.slide_id, []).append(rec)

    out: list[PatchRecord] = []
    for organ in sorted(set(organs)):
        slides = sorted(by_organ.get(organ, {}))
        if len(slides) < slides_per_organ:
            raise InsufficientSlides(
                f"organ {organ!r} has {len(slides)} slides, need {slides_per_organ}")
        gen = generator(seed, "tiny", organ)
        chosen = sorted(gen.choice(len(slides), size=slides_per_organ, replace=False).tolist())
        for idx in chosen:
            pool = by_organ[organ][slides[idx]]
            if len(pool) < patches_per_slide:
                raise InsufficientPatches(
                    f"slide {slides[idx]} has {len(pool)} patches, need {patches_per_slide}")
            picks = sorted(
                gen.choice(len(pool), size=patches_per_slide, replace=False).tolist())
            out.extend(pool[i] for i in picks)
    return out
