"""Command-line surface.

Exit codes: 0 ok, 1 verification findings, 2 usage or config error,
3 I/O or data error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugRng, apply_train
from .compile import compile_dataset, enumerate_corpus
from .config import augment_from_dict, load_config
from .errors import ConfigError, PatchforgeError, UnknownPreset
from .manifest import export_records_csv, read_manifest, verify_manifest, write_manifest
from .presets import protocol
from .raster import Raster, load_png, save_png
from .rng import generator
from .sampler import PatchRecord, tiny_subset
from .splits import SplitPlan, export_split_csv, fraction_subset, slide_level_split, \
    source_constrained_split, stratified_isup_split
from .slide import open_slide
from .stats import ChannelMoments, finalize, update, update_image_mean

logger = logging.getLogger("patchforge")


def _records_to_patchrecords(rows: list[dict]) -> list[PatchRecord]:
    return [
        PatchRecord(
            slide_id=r["slide_id"], x0_um=r["x0_um"], y0_um=r["y0_um"],
            scale_um=r["scale_um"], out_px=r["out_px"], label=r.get("label"),
            mask_ref=r.get("mask_ref"), split=r["split"],
            metadata=r.get("metadata", {}),
        )
        for r in rows
    ]


def cmd_compile(args) -> int:
    cfg = load_config(
        args.config,
        out=Path(args.out),
        seed=args.seed,
        jobs=args.jobs,
        emit_tissue_masks=args.emit_tissue_masks,
    )
    manifest = compile_dataset(cfg)
    print(json.dumps({
        "dataset": cfg.name,
        "manifest": str(manifest.path),
        "counts": manifest.header["counts"],
        "slide_counts": manifest.header["slide_counts"],
    }, indent=2))
    return 0


def cmd_split(args) -> int:
    fractions = tuple(float(f) for f in args.fractions.split(","))
    plan = SplitPlan(fractions=fractions, strategy=args.strategy, seed=args.seed)
    slides = {
        sid: open_slide(uri).metadata for sid, uri in enumerate_corpus(Path(args.corpus))
    }
    if args.strategy == "slide_level":
        mapping = slide_level_split(slides.keys(), plan)
    elif args.strategy == "stratified_isup":
        mapping = stratified_isup_split(slides, plan)
    else:
        mapping = source_constrained_split(slides, plan)
    export_split_csv(mapping, args.out)
    print(f"wrote {len(mapping)} assignments to {args.out}")
    return 0


def cmd_stats(args) -> int:
    manifest = read_manifest(args.manifest)
    root = manifest.root
    acc = ChannelMoments.empty()
    fold = update_image_mean if args.per_image_mean else update
    n = 0
    for rec in manifest.split_records(args.split):
        acc = fold(acc, load_png(root / rec["path"]))
        n += 1
    if n == 0:
        print(json.dumps({"split": args.split, "images": 0, "stats": None}))
        return 0
    result = finalize(acc)
    print(json.dumps({
        "split": args.split,
        "images": n,
        "mode": "per_image_mean" if args.per_image_mean else "per_pixel",
        "mean": [float(v) for v in result.mean],
        "std": [float(v) for v in result.std],
        "degenerate": result.degenerate,
    }, indent=2))
    return 0


def cmd_verify(args) -> int:
    report = verify_manifest(args.manifest, check_hash=args.hash)
    if report.ok:
        print("ok: manifest and files verify clean")
        return 0
    for finding in report.findings:
        print(f"finding: {finding}")
    print(f"{len(report.findings)} finding(s)")
    return 1


def cmd_protocol(args) -> int:
    doc = protocol(args.preset)
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote protocol {args.preset} to {args.out}")
    else:
        print(text)
    return 0


def _preview_image(args) -> Raster:
    if args.image:
        return load_png(args.image)
    # procedural H&E-ish sample: pale background, darker nuclei-like blobs
    gen = generator(args.seed, "preview")
    side = 512
    img = np.full((side, side, 3), (232, 205, 221), dtype=np.float64)
    yy, xx = np.mgrid[0:side, 0:side]
    for _ in range(140):
        cy, cx = gen.uniform(0, side, size=2)
        r = gen.uniform(4, 14)
        blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
        img[blob] = (gen.uniform(90, 150), gen.uniform(40, 90), gen.uniform(120, 170))
    return Raster(img.astype(np.uint8))


def cmd_augment(args) -> int:
    if not args.preview:
        print("nothing to do: pass --preview", file=sys.stderr)
        return 2
    doc = json.loads(Path(args.config).read_text())
    aug = augment_from_dict(doc.get("augment", {}))
    if aug.segmentation_mode:
        raise ConfigError("preview supports classification configs only")
    base = _preview_image(args)
    # un-normalized panels: render the pipeline output back to 8-bit
    cfg = dataclasses.replace(aug, mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))
    panels = [np.asarray(base.data, dtype=np.float64) / 255.0]
    for k in range(args.panels - 1):
        out, _ = apply_train(base, None, cfg, AugRng(args.seed, k))
        panels.append(np.clip(out.astype(np.float64), 0, 1))
    side = max(p.shape[0] for p in panels)
    canvas = np.ones((side, side * len(panels) + 4 * (len(panels) - 1), 3))
    x = 0
    for p in panels:
        canvas[: p.shape[0], x:x + p.shape[1]] = p
        x += side + 4
    save_png(Raster(np.rint(canvas * 255).astype(np.uint8)), args.out)
    print(f"wrote before/after grid ({len(panels)} panels) to {args.out}")
    return 0


def cmd_subset(args) -> int:
    manifest = read_manifest(args.manifest)
    records = _records_to_patchrecords(manifest.records)
    rows_by_id = {id(rec): row for rec, row in zip(records, manifest.records)}
    if args.fraction is not None:
        # subset whole slides of the training split; val/test stay intact
        train = [r for r in records if r.split == "train"]
        rest = [r for r in records if r.split != "train"]
        kept = fraction_subset(train, args.fraction, args.seed) + rest
        suffix = f"fraction{args.fraction:g}"
    else:
        organs = args.organs.split(",") if args.organs else sorted(
            {r.metadata.get("organ", "") for r in records} - {""})
        kept = tiny_subset(records, organs, args.slides_per_organ,
                           args.patches_per_slide, args.seed)
        suffix = "tiny"
    kept_rows = [rows_by_id[id(r)] for r in kept]

    header = dict(manifest.header)
    counts = {"train": 0, "val": 0, "test": 0}
    for row in kept_rows:
        counts[row["split"]] += 1
    header["counts"] = counts
    header["slide_counts"] = {
        s: len({r["slide_id"] for r in kept_rows if r["split"] == s}) for s in counts}
    header["derived_from"] = manifest.header["name"]
    header["name"] = f"{manifest.header['name']}-{suffix}"
    header["stats"] = None  # recompute with `stats` if needed

    out = Path(args.out) if args.out else manifest.root / f"manifest-{suffix}.jsonl"
    if out.parent != manifest.root:
        raise ConfigError("subset manifest must live in the dataset directory "
                          "(record paths are relative to it)")
    derived = type(manifest)(header, kept_rows)
    write_manifest(derived, out)
    print(json.dumps({"manifest": str(out), "counts": counts}, indent=2))
    return 0


def cmd_export_csv(args) -> int:
    manifest = read_manifest(args.manifest)
    export_records_csv(manifest, args.out)
    print(f"wrote {len(manifest.records)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchforge",
        description="Compile magnification-normalized patch datasets from whole-slide images.",
    )
    parser.add_argument("--version", action="version", version=f"patchforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a dataset from a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--emit-tissue-masks", action="store_true")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("split", help="export a slide-level split map as CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--strategy", default="slide_level",
                   choices=["slide_level", "stratified_isup", "source_constrained"])
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="recompute channel statistics from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--per-image-mean", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("verify", help="audit a compiled dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--hash", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("augment", help="write an augmentation preview grid")
    p.add_argument("--preview", action="store_true")
    p.add_argument("--config", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--out", default="augment_preview.png")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--panels", type=int, default=8)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("protocol", help="emit a training-protocol preset")
    p.add_argument("--preset", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("subset", help="derive a fractional or tiny manifest")
    p.add_argument("--manifest", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--fraction", type=float, default=None)
    group.add_argument("--tiny", action="store_true")
    p.add_argument("--organs", default=None)
    p.add_argument("--slides-per-organ", type=int, default=500)
    p.add_argument("--patches-per-slide", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_subset)

    p = sub.add_parser("export-csv", help="export manifest records as CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_csv)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UnknownPreset, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PatchforgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
