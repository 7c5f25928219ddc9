"""Dataset manifest: a JSON header line followed by JSONL record lines.

The single-file layout streams at millions of records, and the write is
atomic (temp file + rename) so an interrupted compile never leaves a
half-valid manifest behind. All paths inside a manifest are relative to
the manifest's directory.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .raster import load_png

SCHEMA_VERSION = 1


@dataclass
class DatasetManifest:
    header: dict
    records: list[dict]
    path: Path | None = None

    @property
    def root(self) -> Path:
        if self.path is None:
            raise ValueError("manifest has no file location")
        return self.path.parent

    def split_records(self, split: str) -> list[dict]:
        return [r for r in self.records if r["split"] == split]


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(json.dumps(manifest.header, sort_keys=True) + "\n")
        for record in manifest.records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    os.replace(tmp, path)
    manifest.path = path


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        with open(path) as fh:
            header_line = fh.readline()
            if not header_line.strip():
                raise ManifestError(f"{path}: empty manifest")
            header = json.loads(header_line)
            records = [json.loads(line) for line in fh if line.strip()]
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed line: {exc}") from exc
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(
            f"{path}: schema_version {header.get('schema_version')} != {SCHEMA_VERSION}")
    return DatasetManifest(header, records, path)


def export_records_csv(manifest: DatasetManifest, path: str | Path) -> None:
    """Flat CSV of the record rows for spreadsheet-grade interoperability."""
    columns = ["slide_id", "split", "label", "mask_ref", "x0_um", "y0_um",
               "scale_um", "out_px", "path", "sha256"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for rec in manifest.records:
            writer.writerow([rec.get(c, "") if rec.get(c) is not None else ""
                             for c in columns])


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class VerifyReport:
    findings: list[str]

    @property
    def ok(self) -> bool:
        return not self.findings


def verify_manifest(path: str | Path, check_hash: bool = False) -> VerifyReport:
    """Audit a compiled dataset against its manifest invariants."""
    manifest = read_manifest(path)
    root = manifest.root
    header = manifest.header
    findings: list[str] = []

    counts: dict[str, int] = {"train": 0, "val": 0, "test": 0}
    slide_splits: dict[str, set[str]] = {}
    class_counts: dict[str, int] = {}
    declared = set(range(len(header.get("classes", ()))))
    mpp = header.get("mpp")

    for i, rec in enumerate(manifest.records):
        split = rec.get("split")
        if split not in counts:
            findings.append(f"record {i}: bad split {split!r}")
            continue
        counts[split] += 1
        slide_splits.setdefault(rec["slide_id"], set()).add(split)

        has_label = rec.get("label") is not None
        has_mask = rec.get("mask_ref") is not None
        if has_label == has_mask:
            findings.append(f"record {i}: need exactly one of label/mask_ref")
        if has_label:
            class_counts[rec["label"]] = class_counts.get(rec["label"], 0) + 1

        if mpp is not None and abs(rec["scale_um"] / rec["out_px"] - mpp) > 1e-9:
            findings.append(f"record {i}: scale/out_px disagrees with manifest mpp")

        for key in ("path", "mask_ref"):
            rel = rec.get(key)
            if rel is None:
                continue
            target = root / rel
            if not target.is_file():
                findings.append(f"record {i}: missing file {rel}")
            elif check_hash:
                want = rec.get("sha256" if key == "path" else "mask_sha256")
                if want and sha256_file(target) != want:
                    findings.append(f"record {i}: content hash mismatch for {rel}")
            if key == "mask_ref" and target.is_file():
                values = set(int(v) for v in np.unique(load_png(target).data))
                if not values <= declared:
                    findings.append(
                        f"record {i}: mask values {sorted(values - declared)} "
                        f"outside declared classes")

    for split, n in counts.items():
        want = header.get("counts", {}).get(split)
        if want is not None and want != n:
            findings.append(f"header counts.{split}={want} but {n} records found")

    for sid, seen in slide_splits.items():
        if len(seen) > 1:
            findings.append(f"slide {sid} appears in splits {sorted(seen)}")

    if header.get("rebalanced") and class_counts:
        if len(set(class_counts.values())) != 1:
            findings.append(f"rebalance flagged but class counts differ: {class_counts}")

    return VerifyReport(findings)
