"""Multi-resolution slide abstraction with microns-per-pixel metadata.

Two containers are supported natively:

* pyramid directory: ``slide.json`` describing id, metadata and levels,
  plus one lossless PNG per level;
* plain image + JSON sidecar: the same schema with a single level.

Vendor WSI formats plug in through ``register_reader``; decoding them is
out of scope here. Slides are immutable after open and safe to read from
many workers; decoded levels are cached behind a lock.
"""
from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import CorruptMetadata, OutOfBounds, UnknownFormat
from .raster import Raster, load_png, save_png

MPP_ANISOTROPY_TOL = 0.01   # square physical crops need near-square pixels
MPP_PYRAMID_TOL = 0.01      # level mpp must track level-0 mpp x downsample

_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")
_SLIDE_TYPES = {"tumor", "normal"}
_ORIGINS = {"train", "test"}


@dataclass(frozen=True)
class MppSpec:
    mpp_x: float
    mpp_y: float

    def __post_init__(self) -> None:
        if self.mpp_x <= 0 or self.mpp_y <= 0:
            raise CorruptMetadata(f"mpp must be positive, got ({self.mpp_x}, {self.mpp_y})")
        if abs(self.mpp_x - self.mpp_y) / self.mpp_x > MPP_ANISOTROPY_TOL:
            raise CorruptMetadata(
                f"pixel anisotropy beyond {MPP_ANISOTROPY_TOL:.0%}: "
                f"mpp_x={self.mpp_x}, mpp_y={self.mpp_y}"
            )


@dataclass(frozen=True)
class PyramidLevel:
    index: int
    width_px: int
    height_px: int
    downsample: float
    mpp: MppSpec
    file: Path | None = None


@dataclass
class Slide:
    id: str
    levels: tuple[PyramidLevel, ...]
    metadata: dict[str, str] = field(default_factory=dict)
    annotation_ref: Path | None = None
    _cache: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def extent_um(self) -> tuple[float, float]:
        """Physical (width, height) of the slide in microns, from level 0."""
        base = self.levels[0]
        return base.width_px * base.mpp.mpp_x, base.height_px * base.mpp.mpp_y


class LevelChoice(NamedTuple):
    level: int
    upsample: bool


def _validate_metadata(meta: dict) -> dict[str, str]:
    out = {str(k): str(v) for k, v in meta.items()}
    if "organ" in out and not out["organ"]:
        raise CorruptMetadata("organ metadata must be non-empty")
    if "provider" in out and not out["provider"]:
        raise CorruptMetadata("provider metadata must be non-empty")
    if "isup" in out and out["isup"] not in {"0", "1", "2", "3", "4", "5"}:
        raise CorruptMetadata(f"isup grade must be 0..5, got {out['isup']!r}")
    if "slide_type" in out and out["slide_type"] not in _SLIDE_TYPES:
        raise CorruptMetadata(f"slide_type must be tumor|normal, got {out['slide_type']!r}")
    if "origin" in out and out["origin"] not in _ORIGINS:
        raise CorruptMetadata(f"origin must be train|test, got {out['origin']!r}")
    return out


def _parse_descriptor(doc: dict, base_dir: Path) -> Slide:
    slide_id = doc.get("id", "")
    if not slide_id or not _ID_RE.match(slide_id):
        raise CorruptMetadata(f"slide id missing or not filename-safe: {slide_id!r}")
    raw_levels = doc.get("levels")
    if not raw_levels:
        raise CorruptMetadata(f"slide {slide_id}: at least one level required")

    levels = []
    for idx, entry in enumerate(raw_levels):
        try:
            mpp = MppSpec(float(entry["mpp_x"]), float(entry["mpp_y"]))
            level = PyramidLevel(
                index=idx,
                width_px=int(entry["width"]),
                height_px=int(entry["height"]),
                downsample=float(entry["downsample"]),
                mpp=mpp,
                file=base_dir / entry["file"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptMetadata(f"slide {slide_id}: bad level {idx}: {exc}") from exc
        if level.width_px < 1 or level.height_px < 1:
            raise CorruptMetadata(f"slide {slide_id}: level {idx} has empty dimensions")
        levels.append(level)

    if abs(levels[0].downsample - 1.0) > 1e-9:
        raise CorruptMetadata(f"slide {slide_id}: level 0 downsample must be 1")
    base_mpp = levels[0].mpp
    prev_ds = 0.0
    for level in levels:
        if level.downsample <= prev_ds:
            raise CorruptMetadata(
                f"slide {slide_id}: downsample must strictly increase "
                f"(level {level.index}: {level.downsample} after {prev_ds})"
            )
        prev_ds = level.downsample
        expected = base_mpp.mpp_x * level.downsample
        if abs(level.mpp.mpp_x - expected) / expected > MPP_PYRAMID_TOL:
            raise CorruptMetadata(
                f"slide {slide_id}: level {level.index} mpp {level.mpp.mpp_x} "
                f"contradicts downsample {level.downsample} (expected ~{expected})"
            )

    annotation = doc.get("annotation")
    return Slide(
        id=slide_id,
        levels=tuple(levels),
        metadata=_validate_metadata(doc.get("metadata", {})),
        annotation_ref=(base_dir / annotation) if annotation else None,
    )


_READERS: dict[str, Callable[[str], Slide]] = {}


def register_reader(scheme: str, opener: Callable[[str], Slide]) -> None:
    """Extension point for vendor formats: ``scheme://...`` URIs route to opener."""
    _READERS[scheme] = opener


def open_slide(uri: str | Path) -> Slide:
    """Open a slide container; metadata is validated, no pixels are read."""
    text = str(uri)
    if "://" in text:
        scheme = text.split("://", 1)[0]
        if scheme in _READERS:
            return _READERS[scheme](text)
        raise UnknownFormat(f"no reader registered for scheme {scheme!r}")

    path = Path(uri)
    if path.is_dir():
        descriptor = path / "slide.json"
        if not descriptor.is_file():
            raise UnknownFormat(f"{path} has no slide.json")
    elif path.suffix == ".json" and path.is_file():
        descriptor = path
    elif path.is_file() and path.with_name(path.name + ".json").is_file():
        descriptor = path.with_name(path.name + ".json")
    else:
        raise UnknownFormat(f"unsupported slide container: {uri}")

    try:
        doc = json.loads(descriptor.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptMetadata(f"{descriptor}: invalid JSON: {exc}") from exc
    return _parse_descriptor(doc, descriptor.parent)


def _level_pixels(slide: Slide, level: PyramidLevel) -> np.ndarray:
    with slide._lock:
        cached = slide._cache.get(level.index)
        if cached is None:
            raster = load_png(level.file)
            if raster.width != level.width_px or raster.height != level.height_px:
                raise CorruptMetadata(
                    f"slide {slide.id}: level {level.index} file is "
                    f"{raster.width}x{raster.height}, metadata says "
                    f"{level.width_px}x{level.height_px}"
                )
            cached = raster.data
            cached.setflags(write=False)
            slide._cache[level.index] = cached
    return cached


def read_region(slide: Slide, level: int, x: int, y: int, w: int, h: int) -> Raster:
    """Exact pixels of one level, no resampling. Pure and thread-safe."""
    if level < 0 or level >= len(slide.levels):
        raise OutOfBounds(f"slide {slide.id} has no level {level}")
    lv = slide.levels[level]
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > lv.width_px or y + h > lv.height_px:
        raise OutOfBounds(
            f"region ({x},{y},{w},{h}) outside level {level} "
            f"({lv.width_px}x{lv.height_px})"
        )
    pixels = _level_pixels(slide, lv)
    return Raster(np.array(pixels[y:y + h, x:x + w, :]))


def level_for_mpp(slide: Slide, target_mpp: float) -> LevelChoice:
    """Coarsest level still at least as fine as target_mpp.

    Prefers reading a coarser-but-sufficient level and downsampling; only
    flags upsampling when even level 0 is coarser than the target.
    """
    if target_mpp <= 0:
        raise ValueError("target_mpp must be positive")
    bound = target_mpp * (1 + 1e-6)
    best = None
    for lv in slide.levels:
        if lv.mpp.mpp_x <= bound:
            best = lv.index
    if best is None:
        return LevelChoice(0, True)
    return LevelChoice(best, False)


def physical_extent_px(scale_um: float, mpp: float) -> int:
    """Pixels covering scale_um at mpp; round to nearest, minimum 1."""
    if scale_um <= 0 or mpp <= 0:
        raise ValueError("scale_um and mpp must be positive")
    return max(1, int(round(scale_um / mpp)))


def write_slide(
    directory: str | Path,
    slide_id: str,
    level0: np.ndarray,
    mpp: float | tuple[float, float],
    downsamples: tuple[float, ...] = (1.0,),
    metadata: dict[str, str] | None = None,
    annotation: str | None = None,
    level_arrays: dict[int, np.ndarray] | None = None,
) -> Path:
    """Write a pyramid-directory slide (the desk-scale test format).

    Levels beyond 0 default to nearest-decimated copies of level 0;
    ``level_arrays`` overrides individual levels (e.g. exact mask pyramids).
    Returns the slide directory.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mpp_x, mpp_y = (mpp, mpp) if isinstance(mpp, (int, float)) else mpp
    base = Raster(np.ascontiguousarray(level0, dtype=np.uint8))

    entries = []
    for idx, ds in enumerate(downsamples):
        if level_arrays and idx in level_arrays:
            arr = np.ascontiguousarray(level_arrays[idx], dtype=np.uint8)
        elif ds == 1.0:
            arr = base.data
        else:
            step = int(round(ds))
            arr = base.data[::step, ::step, :]
        name = f"level_{idx}.png"
        save_png(Raster(arr), directory / name)
        entries.append({
            "width": arr.shape[1],
            "height": arr.shape[0],
            "downsample": ds,
            "mpp_x": mpp_x * ds,
            "mpp_y": mpp_y * ds,
            "file": name,
        })

    doc: dict = {"id": slide_id, "metadata": metadata or {}, "levels": entries}
    if annotation:
        doc["annotation"] = annotation
    (directory / "slide.json").write_text(json.dumps(doc, indent=2))
    return directory
