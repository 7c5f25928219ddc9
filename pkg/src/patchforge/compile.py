"""End-to-end dataset compilation.

Work fans out per slide over a bounded worker pool in two phases: sampling
(tissue mask, patch records, labels) and materialization (patch extraction,
PNG writes, streaming stats). Every per-slide step is seeded by slide id
and all merges happen in sorted slide order, so the output is identical
for any worker count and any corpus enumeration order. The manifest is
written last, atomically; on failure the partial dataset tree is removed.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .annotations import load_annotation
from .config import CompileConfig
from .errors import ConfigError, CorruptMetadata, MissingAnnotation, PatchforgeError
from .manifest import SCHEMA_VERSION, DatasetManifest, write_manifest
from .raster import png_bytes, png_bytes_1bit
from .reference import PTCGA200_MEAN, PTCGA200_STD
from .resample import extract_normalized_patch
from .sampler import PatchRecord, co_crop_mask, assign_label_camelyon, grid_patches, random_patches
from .slide import open_slide
from .splits import rebalance_classes, slide_level_split, source_constrained_split, stratified_isup_split
from .stats import ChannelMoments, finalize, merge, update, update_image_mean
from .tissue import tissue_mask

logger = logging.getLogger(__name__)


def enumerate_corpus(corpus: Path) -> list[tuple[str, str]]:
    """(slide id, uri) for every slide container directly under corpus, sorted by id."""
    if not corpus.is_dir():
        raise ConfigError(f"corpus {corpus} is not a directory")
    found: dict[str, str] = {}
    for child in sorted(corpus.iterdir()):
        if child.is_dir() and (child / "slide.json").is_file():
            uri = str(child)
        elif child.is_file() and child.suffix == ".json":
            try:
                doc = json.loads(child.read_text())
            except ValueError:
                continue
            if not isinstance(doc, dict) or "levels" not in doc:
                continue  # annotation or other sidecar metadata, not a slide
            uri = str(child)
        else:
            continue
        slide = open_slide(uri)
        if slide.id in found:
            raise CorruptMetadata(f"duplicate slide id {slide.id!r} in corpus")
        found[slide.id] = uri
    return sorted(found.items())


def _with_slide_context(slide_id: str, exc: Exception) -> Exception:
    if isinstance(exc, PatchforgeError) and slide_id not in str(exc):
        return type(exc)(f"slide {slide_id}: {exc}")
    return exc


def _sample_one(task: tuple[str, str, CompileConfig, str | None]):
    """Phase A: tissue mask, sampling, and label assignment for one slide."""
    slide_id, uri, cfg, tissue_mask_path = task
    try:
        slide = open_slide(uri)
        spec = cfg.sampling
        needs_mask = spec.mode == "random" or spec.tissue_tau > 0 or tissue_mask_path
        mask = tissue_mask(slide, cfg.work_mpp, cfg.min_component_px) if needs_mask else None
        if tissue_mask_path:
            Path(tissue_mask_path).write_bytes(png_bytes_1bit(mask.mask))

        if spec.mode == "random":
            records = random_patches(slide, mask, spec)
        else:
            records = grid_patches(slide, mask, spec)

        if cfg.label_policy == "organ":
            organ = slide.metadata.get("organ")
            if organ is None:
                raise ConfigError(f"slide {slide_id} has no organ metadata")
            label = cfg.class_map.get(organ) if cfg.class_map else organ
            if label is None or label not in cfg.classes:
                raise ConfigError(f"organ {organ!r} not covered by the class map")
            for rec in records:
                rec.label = label
        elif cfg.label_policy == "camelyon":
            annotation = None
            if slide.metadata.get("slide_type") == "tumor":
                if slide.annotation_ref is None:
                    raise MissingAnnotation(f"tumor slide {slide_id} has no annotation")
                annotation = load_annotation(slide.annotation_ref)
            kept = []
            for rec in records:
                verdict = assign_label_camelyon(rec, slide, annotation, cfg.annotation_tau)
                if verdict != "reject":
                    rec.label = verdict
                    kept.append(rec)
            records = kept
        else:
            if slide.annotation_ref is None:
                raise MissingAnnotation(f"slide {slide_id} has no mask pyramid")
        return slide_id, records
    except Exception as exc:
        raise _with_slide_context(slide_id, exc) from exc


def _materialize_one(task):
    """Phase B: extract, write PNGs, hash, and accumulate train statistics."""
    slide_id, uri, cfg, dataset_dir, items, compute_stats = task
    try:
        slide = open_slide(uri)
        mask_slide = None
        if cfg.label_policy == "mask":
            mask_slide = open_slide(slide.annotation_ref)
        per_pixel = ChannelMoments.empty()
        per_image = ChannelMoments.empty()
        rows = []
        for rec, index, rel_path, mask_rel in items:
            patch = extract_normalized_patch(
                slide, rec.x0_um, rec.y0_um, rec.scale_um, rec.out_px)
            blob = png_bytes(patch)
            target = Path(dataset_dir) / rel_path
            target.write_bytes(blob)
            row = {
                "slide_id": rec.slide_id,
                "x0_um": rec.x0_um,
                "y0_um": rec.y0_um,
                "scale_um": rec.scale_um,
                "out_px": rec.out_px,
                "label": rec.label,
                "mask_ref": mask_rel,
                "split": rec.split,
                "metadata": rec.metadata,
                "path": rel_path,
                "sha256": hashlib.sha256(blob).hexdigest(),
            }
            if mask_rel is not None:
                mask_raster, histogram = co_crop_mask(mask_slide, rec)
                mask_blob = png_bytes(mask_raster)
                (Path(dataset_dir) / mask_rel).write_bytes(mask_blob)
                row["mask_sha256"] = hashlib.sha256(mask_blob).hexdigest()
                row["mask_histogram"] = {str(k): v for k, v in histogram.items()}
            if compute_stats:
                per_pixel = update(per_pixel, patch)
                per_image = update_image_mean(per_image, patch)
            rows.append(row)
        return slide_id, rows, per_pixel, per_image
    except Exception as exc:
        raise _with_slide_context(slide_id, exc) from exc


def _run_tasks(worker, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


def _split_map(cfg: CompileConfig, slides_meta: dict[str, dict[str, str]]) -> dict[str, str]:
    strategy = cfg.split.strategy
    if strategy == "slide_level":
        return slide_level_split(slides_meta.keys(), cfg.split)
    if strategy == "stratified_isup":
        return stratified_isup_split(slides_meta, cfg.split)
    return source_constrained_split(slides_meta, cfg.split)


def _stats_block(per_pixel: ChannelMoments, per_image: ChannelMoments):
    if per_pixel.count == 0:
        return None
    pixel = finalize(per_pixel)
    image = finalize(per_image)
    return {
        "per_pixel": {
            "count": per_pixel.count,
            "mean": [float(v) for v in pixel.mean],
            "std": [float(v) for v in pixel.std],
        },
        "per_image_mean": {
            "count": per_image.count,
            "mean": [float(v) for v in image.mean],
            "std": [float(v) for v in image.std],
            "degenerate": image.degenerate,
        },
    }


def compile_dataset(cfg: CompileConfig) -> DatasetManifest:
    entries = enumerate_corpus(cfg.corpus)
    slides_meta: dict[str, dict[str, str]] = {}
    uris: dict[str, str] = {}
    for slide_id, uri in entries:
        meta = open_slide(uri).metadata
        if all(meta.get(k) == v for k, v in cfg.filters.items()):
            slides_meta[slide_id] = meta
            uris[slide_id] = uri
    if not slides_meta:
        raise ConfigError("no slides pass the metadata filters")

    split_map = _split_map(cfg, slides_meta)

    dataset_dir = cfg.out / cfg.name
    dataset_dir.mkdir(parents=True, exist_ok=True)
    try:
        mask_dir = None
        if cfg.emit_tissue_masks:
            mask_dir = dataset_dir / "tissue_masks"
            mask_dir.mkdir(exist_ok=True)

        tasks = [
            (sid, uris[sid], cfg, str(mask_dir / f"{sid}.png") if mask_dir else None)
            for sid in sorted(slides_meta)
        ]
        sampled = dict()
        for slide_id, records in _run_tasks(_sample_one, tasks, cfg.jobs):
            sampled[slide_id] = records

        # flatten in slide order, keeping each record's per-slide index
        flat: list[tuple[PatchRecord, int]] = []
        for sid in sorted(sampled):
            for index, rec in enumerate(sampled[sid]):
                rec.split = split_map[sid]
                flat.append((rec, index))

        if cfg.rebalance:
            if cfg.task != "classification":
                raise ConfigError("rebalance applies to classification datasets only")
            kept = rebalance_classes([rec for rec, _ in flat], cfg.seed)
            kept_ids = {id(rec) for rec in kept}
            flat = [(rec, idx) for rec, idx in flat if id(rec) in kept_ids]

        # deterministic output paths
        by_slide: dict[str, list] = {}
        dirs: set[Path] = set()
        for rec, index in flat:
            if cfg.task == "segmentation":
                rel = f"{rec.split}/patches/{rec.slide_id}_{index}.png"
                mask_rel = f"{rec.split}/patches/{rec.slide_id}_{index}_mask.png"
                rec.mask_ref = mask_rel
            else:
                rel = f"{rec.split}/{rec.label}/{rec.slide_id}_{index}.png"
                mask_rel = None
            dirs.add((dataset_dir / rel).parent)
            by_slide.setdefault(rec.slide_id, []).append((rec, index, rel, mask_rel))
        for d in dirs:
            d.mkdir(parents=True, exist_ok=True)

        write_tasks = [
            (sid, uris[sid], cfg, str(dataset_dir), by_slide[sid],
             split_map[sid] == "train")
            for sid in sorted(by_slide)
        ]
        rows: list[dict] = []
        per_pixel = ChannelMoments.empty()
        per_image = ChannelMoments.empty()
        for slide_id, slide_rows, block_pixel, block_image in sorted(
                _run_tasks(_materialize_one, write_tasks, cfg.jobs),
                key=lambda item: item[0]):
            rows.extend(slide_rows)
            per_pixel = merge(per_pixel, block_pixel)
            per_image = merge(per_image, block_image)

        counts = {"train": 0, "val": 0, "test": 0}
        slide_sets: dict[str, set[str]] = {k: set() for k in counts}
        for row in rows:
            counts[row["split"]] += 1
            slide_sets[row["split"]].add(row["slide_id"])

        header = {
            "schema_version": SCHEMA_VERSION,
            "name": cfg.name,
            "kind": cfg.kind,
            "task": cfg.task,
            "scale_um": cfg.sampling.scale_um,
            "out_px": cfg.sampling.out_px,
            "mpp": cfg.sampling.scale_um / cfg.sampling.out_px,
            "classes": list(cfg.classes),
            "seed": cfg.seed,
            "config_hash": cfg.config_hash(),
            "tool_version": __version__,
            "tissue_tau": cfg.sampling.tissue_tau,
            "rebalanced": cfg.rebalance,
            "split_strategy": cfg.split.strategy,
            "fractions": list(cfg.split.fractions),
            "counts": counts,
            "slide_counts": {k: len(v) for k, v in slide_sets.items()},
            "stats": _stats_block(per_pixel, per_image),
            "reference_stats": (
                {"mean": list(PTCGA200_MEAN), "std": list(PTCGA200_STD)}
                if cfg.kind == "ptcga200" else None),
        }
        manifest = DatasetManifest(header, rows)
        write_manifest(manifest, dataset_dir / "manifest.jsonl")
        logger.info("compiled %s: %s", cfg.name, counts)
        return manifest
    except Exception:
        shutil.rmtree(dataset_dir, ignore_errors=True)
        raise
