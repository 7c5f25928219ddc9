"""Annotated-region input for label assignment.

Two carriers are accepted: a mask pyramid (a slide whose nonzero pixels are
annotated) and a polygon file of closed rings in level-0 micron coordinates
with even-odd fill (rings combine by symmetric difference, so holes work).
Both expose coverage(rect) -> fraction of the rectangle that is annotated.
"""
from __future__ import annotations

import json
from functools import reduce
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon, box

from .errors import CorruptMetadata, OutOfBounds
from .slide import Slide, level_for_mpp, open_slide, read_region


class MaskAnnotation:
    """Annotation stored as a mask pyramid aligned with the tissue slide."""

    def __init__(self, mask_slide: Slide, work_mpp: float | None = None):
        self.slide = mask_slide
        level = level_for_mpp(mask_slide, work_mpp).level if work_mpp else 0
        self._level = level
        lv = mask_slide.levels[level]
        plane = read_region(mask_slide, level, 0, 0, lv.width_px, lv.height_px)
        self._annotated = plane.data.max(axis=2) > 0
        self._mpp = lv.mpp

    def coverage(self, x0_um: float, y0_um: float, w_um: float, h_um: float) -> float:
        mh, mw = self._annotated.shape
        mpp_x, mpp_y = self._mpp.mpp_x, self._mpp.mpp_y
        eps = 1e-6
        if x0_um < -eps or y0_um < -eps or x0_um + w_um > mw * mpp_x + eps \
                or y0_um + h_um > mh * mpp_y + eps:
            raise OutOfBounds("annotation query outside the mask pyramid")
        xs = max(0, int(round(x0_um / mpp_x)))
        ys = max(0, int(round(y0_um / mpp_y)))
        xe = min(mw, max(xs + 1, int(round((x0_um + w_um) / mpp_x))))
        ye = min(mh, max(ys + 1, int(round((y0_um + h_um) / mpp_y))))
        window = self._annotated[ys:ye, xs:xe]
        return float(window.sum()) / window.size


class PolygonAnnotation:
    """Annotation as closed rings with even-odd fill, coordinates in microns."""

    def __init__(self, rings: list[list[tuple[float, float]]]):
        if not rings:
            raise CorruptMetadata("polygon annotation has no rings")
        shapes = []
        for ring in rings:
            if len(ring) < 3:
                raise CorruptMetadata("polygon ring needs at least 3 vertices")
            shapes.append(Polygon(ring).buffer(0))
        self.region = reduce(lambda a, b: a.symmetric_difference(b), shapes)

    @classmethod
    def from_file(cls, path: str | Path) -> "PolygonAnnotation":
        doc = json.loads(Path(path).read_text())
        return cls(
            [[(float(x), float(y)) for x, y in ring] for ring in doc["rings"]]
        )

    def coverage(self, x0_um: float, y0_um: float, w_um: float, h_um: float) -> float:
        patch = box(x0_um, y0_um, x0_um + w_um, y0_um + h_um)
        return self.region.intersection(patch).area / patch.area


def load_annotation(ref: Path, work_mpp: float | None = None):
    """Open the annotation a slide references (mask pyramid or polygon file)."""
    ref = Path(ref)
    if ref.is_dir() or ref.name == "slide.json":
        return MaskAnnotation(open_slide(ref), work_mpp)
    if ref.suffix == ".json":
        doc = json.loads(ref.read_text())
        if "rings" in doc:
            return PolygonAnnotation.from_file(ref)
        return MaskAnnotation(open_slide(ref), work_mpp)
    raise CorruptMetadata(f"unsupported annotation reference: {ref}")
