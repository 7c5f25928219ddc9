"""Dataset compile presets and training-protocol presets.

Dataset presets carry the published compilation parameters of the three
dataset procedures; the caller supplies corpus and output paths. Protocol
presets reproduce the published fine-tune and scratch-pretrain
hyperparameter rows plus a per-step learning-rate table.
"""
from __future__ import annotations

from typing import Any

from .errors import UnknownPreset
from .reference import PTCGA200_MEAN, PTCGA200_STD, SCRATCH_MEAN, SCRATCH_STD
from .vitgeom import lr_at

# published split sizes, used as split fractions at desk scale
_PTCGA_TOTAL = 4945500 + 107500 + 57000
_SEGPANDA_TOTAL = 70878 + 15042 + 15040

DATASET_PRESETS: dict[str, dict[str, Any]] = {
    # large 20-organ classification set: 500 random patches per slide,
    # 200 um at 512 px, slide-level split
    "ptcga200": {
        "name": "ptcga200",
        "kind": "ptcga200",
        "sampling": {
            "mode": "random", "scale_um": 200.0, "out_px": 512,
            "patches_per_slide": 500, "tissue_tau": 0.5,
        },
        "split": {
            "strategy": "slide_level",
            "fractions": [4945500 / _PTCGA_TOTAL, 107500 / _PTCGA_TOTAL,
                          57000 / _PTCGA_TOTAL],
        },
        "labels": {"policy": "organ"},
        "rebalance": False,
    },
    # binary tumor/normal set: systematic grid with 50% overlap,
    # original test slides stay test, normals discarded to match tumors
    "pcam200": {
        "name": "pcam200",
        "kind": "pcam200",
        "sampling": {
            "mode": "grid", "scale_um": 200.0, "out_px": 512,
            "stride_um": 100.0, "tissue_tau": 0.5,
        },
        "split": {"strategy": "source_constrained", "fractions": [0.73, 0.27, 0.0]},
        "labels": {"policy": "camelyon", "annotation_tau": 1.0},
        "rebalance": True,
    },
    # 6-class segmentation set: 400 um at 1024 px grid over Radboud slides,
    # ISUP-stratified slide-level split
    "segpanda200": {
        "name": "segpanda200",
        "kind": "segpanda200",
        "sampling": {
            "mode": "grid", "scale_um": 400.0, "out_px": 1024,
            "stride_um": 200.0, "tissue_tau": 0.5,
        },
        "split": {
            "strategy": "stratified_isup",
            "fractions": [70878 / _SEGPANDA_TOTAL, 15042 / _SEGPANDA_TOTAL,
                          15040 / _SEGPANDA_TOTAL],
        },
        "labels": {"policy": "mask"},
        "filters": {"provider": "Radboud"},
        "rebalance": False,
    },
}


def dataset_preset(name: str) -> dict[str, Any]:
    try:
        preset = DATASET_PRESETS[name]
    except KeyError:
        raise UnknownPreset(
            f"unknown dataset preset {name!r}; have {sorted(DATASET_PRESETS)}") from None
    return {k: (dict(v) if isinstance(v, dict) else v) for k, v in preset.items()}


def augment_preset(kind: str, ssl: bool = False) -> dict[str, Any]:
    """Training augmentation parameters for one dataset kind."""
    doc: dict[str, Any] = {
        "out_px": 512,
        "rrc_scale_min": 0.2,
        "jitter": [0.4, 0.4, 0.4, 0.1],
        "jitter_p": 0.8,
        "grayscale_p": 0.2,
        "ssl_mode": ssl,
        "blur_sigma": [0.1, 2.0],
        "blur_p": 0.5,
        "hflip_p": 0.5,
        "vflip_p": 0.5,
        "mean": list(PTCGA200_MEAN),
        "std": list(PTCGA200_STD),
    }
    if kind == "pcam200":
        doc["rrc_scale_min"] = 0.8
    elif kind == "segpanda200":
        doc["segmentation_mode"] = True
    elif kind not in ("ptcga200", "pcam", "custom"):
        raise UnknownPreset(f"unknown augmentation preset {kind!r}")
    return doc


_SGD_FINETUNE = {
    "optimizer": {"name": "sgd", "momentum": 0.9, "nesterov": False},
    "weight_decay": 0.0,
    "batch_size": 512,
    "base_lr": 0.05,
    "schedule": "cosine",
    "warmup": 0,
    "unit": "iteration",
    # the batch/256 peak rule applies to scratch pretraining only
    "lr_rule_batch": 256,
}

_ADAMW_PRETRAIN = {
    "optimizer": {"name": "adamw", "beta1": 0.9, "beta2": 0.999},
    "batch_size": 4096,
    "schedule": "warmup-cosine",
    "unit": "epoch",
    "lr_rule_batch": 4096,
    "normalization": {"mean": list(PTCGA200_MEAN), "std": list(PTCGA200_STD)},
}

PROTOCOL_PRESETS: dict[str, dict[str, Any]] = {
    "finetune-default": {**_SGD_FINETUNE, "total": 1000,
                         "normalization": "same-as-pretraining"},
    "finetune-ptcga200": {**_SGD_FINETUNE, "total": 30000,
                          "normalization": "same-as-pretraining"},
    "finetune-pcam200": {**_SGD_FINETUNE, "total": 1000,
                         "normalization": "same-as-pretraining"},
    "finetune-pcam": {**_SGD_FINETUNE, "total": 1000,
                      "normalization": "same-as-pretraining"},
    "finetune-segpanda200": {**_SGD_FINETUNE, "total": 1000,
                             "normalization": "same-as-pretraining"},
    "finetune-scratch": {**_SGD_FINETUNE, "total": 1000,
                         "normalization": {"mean": list(SCRATCH_MEAN),
                                           "std": list(SCRATCH_STD)}},
    "pretrain-resnet18": {**_ADAMW_PRETRAIN, "total": 60, "image_px": 224,
                          "weight_decay": 5e-5, "base_lr": 1e-3, "warmup": 10},
    "pretrain-resnet50": {**_ADAMW_PRETRAIN, "total": 60, "image_px": 224,
                          "weight_decay": 5e-5, "base_lr": 5e-4, "warmup": 10},
    "pretrain-inceptionv3": {**_ADAMW_PRETRAIN, "total": 60, "image_px": 299,
                             "weight_decay": 5e-5, "base_lr": 1e-4, "warmup": 10},
    "pretrain-efficientnet-b3": {**_ADAMW_PRETRAIN, "total": 60, "image_px": 300,
                                 "weight_decay": 5e-5, "base_lr": 1e-4, "warmup": 10},
    "pretrain-vit-s16": {**_ADAMW_PRETRAIN, "total": 80, "image_px": 224,
                         "weight_decay": 0.03, "base_lr": 1e-4, "warmup": 15},
    "pretrain-vit-b32": {**_ADAMW_PRETRAIN, "total": 100, "image_px": 224,
                         "weight_decay": 0.03, "base_lr": 1e-4, "warmup": 20},
}


def protocol(name: str) -> dict[str, Any]:
    """Machine-readable training protocol with a per-step LR table."""
    try:
        preset = PROTOCOL_PRESETS[name]
    except KeyError:
        raise UnknownPreset(
            f"unknown protocol preset {name!r}; have {sorted(PROTOCOL_PRESETS)}") from None
    total = preset["total"]
    warmup = preset["warmup"]
    base_lr = preset["base_lr"]
    rule_batch = preset["lr_rule_batch"]
    peak = base_lr * rule_batch / 256
    table = [lr_at(step, total, warmup, base_lr, rule_batch) for step in range(total + 1)]
    doc = {k: v for k, v in preset.items() if k != "lr_rule_batch"}
    doc.update({
        "preset": name,
        "peak_lr": peak,
        "lr_table": table,
        "lr_table_unit": preset["unit"],
    })
    return doc
