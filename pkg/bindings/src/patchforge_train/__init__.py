"""Training-loop bindings for compiled patch datasets.

A BoundDataset wraps one split of a compiled manifest and serves
(image, target) pairs ready for a deep-learning loader: images as
contiguous channel-major float32 buffers (zero-copy into torch via
``torch.from_numpy``), targets as class indices or uint8 masks. Outputs
are byte-identical to the core pipeline for the same seed: augmentation
randomness is keyed by (epoch seed, record position), never by access
order or worker id, so any number of loader workers sees the same data.

The geometry and schedule helpers (`retile`, `resize_pos_embed`, `lr_at`,
...) are the core implementations re-exported unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from patchforge import __version__ as _core_version
from patchforge.augment import AugRng, AugmentConfig, apply_eval, apply_train
from patchforge.errors import ManifestError
from patchforge.manifest import DatasetManifest, read_manifest
from patchforge.raster import Raster, load_png
from patchforge.reference import PTCGA200_MEAN, PTCGA200_STD
from patchforge.rng import generator
from patchforge.stats import ChannelMoments, finalize, merge, update, update_image_mean
from patchforge.vitgeom import (
    PosEmbed,
    TokenGrid,
    feature_map_size,
    flatten_map,
    load_pos_embed,
    lr_at,
    resize_pos_embed,
    retile,
    save_pos_embed,
    validate_layer_tap,
    zero_pos_embed,
)

__version__ = "0.1.0"
SUPPORTED_MANIFEST_SCHEMA = 1

__all__ = [
    "AugRng",
    "AugmentConfig",
    "BoundDataset",
    "ChannelMoments",
    "PosEmbed",
    "TokenGrid",
    "apply_eval",
    "apply_train",
    "feature_map_size",
    "finalize",
    "flatten_map",
    "load_pos_embed",
    "lr_at",
    "merge",
    "open_dataset",
    "resize_pos_embed",
    "retile",
    "save_pos_embed",
    "update",
    "update_image_mean",
    "validate_layer_tap",
    "zero_pos_embed",
]


def _eval_normalization(header: dict, augment: AugmentConfig | None):
    if augment is not None:
        return augment.mean, augment.std
    stats = header.get("stats")
    if stats and stats.get("per_pixel"):
        return tuple(stats["per_pixel"]["mean"]), tuple(stats["per_pixel"]["std"])
    reference = header.get("reference_stats")
    if reference:
        return tuple(reference["mean"]), tuple(reference["std"])
    return PTCGA200_MEAN, PTCGA200_STD


@dataclass
class BoundDataset:
    """One split of a compiled dataset, indexable by a training loader."""

    manifest: DatasetManifest
    split: str
    mode: str
    augment: AugmentConfig | None
    epoch_seed: int

    def __post_init__(self) -> None:
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be train|eval, got {self.mode!r}")
        if self.mode == "train" and self.augment is None:
            raise ValueError("train mode needs an AugmentConfig")
        self._records = [r for r in self.manifest.records if r["split"] == self.split]
        self._order = list(range(len(self._records)))
        self._root = self.manifest.root
        self._classes = list(self.manifest.header.get("classes", ()))
        self._task = self.manifest.header.get("task", "classification")
        self._kind = self.manifest.header.get("kind", "custom")
        self._mean, self._std = _eval_normalization(self.manifest.header, self.augment)

    def __len__(self) -> int:
        return len(self._order)

    def set_epoch(self, epoch_seed: int) -> None:
        """Re-seed the per-record augmentation streams."""
        self.epoch_seed = epoch_seed

    def shuffle(self, seed: int) -> None:
        """Seeded permutation of iteration order; record streams untouched."""
        self._order = generator(seed, "loader-shuffle").permutation(len(self._records)).tolist()

    def reset_order(self) -> None:
        self._order = list(range(len(self._records)))

    def record(self, index: int) -> dict:
        return self._records[self._order[index]]

    def __getitem__(self, index: int):
        if not 0 <= index < len(self._order):
            raise IndexError(f"index {index} out of range [0, {len(self._order)})")
        position = self._order[index]
        rec = self._records[position]
        img = load_png(self._root / rec["path"])
        mask = load_png(self._root / rec["mask_ref"]) if rec.get("mask_ref") else None

        if self.mode == "train":
            rng = AugRng(self.epoch_seed, position)
            arr, mask_arr = apply_train(
                img, mask if self.augment.segmentation_mode else None,
                self.augment, rng)
        else:
            arr = apply_eval(img, self._kind, self._mean, self._std)
            mask_arr = mask.plane() if mask is not None else None

        buffer = np.ascontiguousarray(arr.transpose(2, 0, 1))
        if self._task == "segmentation":
            return buffer, np.ascontiguousarray(mask_arr)
        return buffer, self._classes.index(rec["label"])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def open_dataset(
    manifest_path: str | Path,
    split: str,
    mode: str = "eval",
    augment: AugmentConfig | None = None,
    epoch_seed: int = 0,
) -> BoundDataset:
    """Bind one split of a compiled dataset for a training loop."""
    if split not in ("train", "val", "test"):
        raise ValueError(f"split must be train|val|test, got {split!r}")
    manifest = read_manifest(manifest_path)
    if manifest.header.get("schema_version") != SUPPORTED_MANIFEST_SCHEMA:
        raise ManifestError(
            f"bindings {__version__} (core {_core_version}) support manifest "
            f"schema {SUPPORTED_MANIFEST_SCHEMA}")
    return BoundDataset(manifest, split, mode, augment, epoch_seed)
