"""Compile configuration: JSON schema, validation, and typed access."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .augment import AugmentConfig
from .errors import ConfigError
from .sampler import SampleSpec
from .splits import SplitPlan

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "corpus", "sampling", "split", "labels"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "kind": {"type": "string", "minLength": 1},
        "corpus": {"type": "string", "minLength": 1},
        "seed": {"type": "integer", "minimum": 0},
        "jobs": {"type": "integer", "minimum": 1},
        "rebalance": {"type": "boolean"},
        "filters": {"type": "object", "additionalProperties": {"type": "string"}},
        "sampling": {
            "type": "object",
            "required": ["mode", "scale_um", "out_px"],
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["random", "grid"]},
                "scale_um": {"type": "number", "exclusiveMinimum": 0},
                "out_px": {"type": "integer", "minimum": 1},
                "patches_per_slide": {"type": "integer", "minimum": 1},
                "stride_um": {"type": "number", "exclusiveMinimum": 0},
                "tissue_tau": {"type": "number", "minimum": 0, "maximum": 1},
                "max_attempts_factor": {"type": "integer", "minimum": 1},
            },
        },
        "tissue": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "work_mpp": {"type": "number", "exclusiveMinimum": 0},
                "min_component_px": {"type": "integer", "minimum": 1},
            },
        },
        "split": {
            "type": "object",
            "required": ["strategy", "fractions"],
            "additionalProperties": False,
            "properties": {
                "strategy": {
                    "enum": ["slide_level", "stratified_isup", "source_constrained"]
                },
                "fractions": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0},
                    "minItems": 3,
                    "maxItems": 3,
                },
            },
        },
        "labels": {
            "type": "object",
            "required": ["policy"],
            "additionalProperties": False,
            "properties": {
                "policy": {"enum": ["organ", "camelyon", "mask"]},
                "class_map": {
                    "type": "object",
                    "minProperties": 1,
                    "additionalProperties": {"type": "string"},
                },
                "annotation_tau": {"type": "number", "minimum": 0, "maximum": 1},
                "classes": {
                    "type": "array", "items": {"type": "string"}, "minItems": 1,
                },
            },
        },
        "augment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "out_px": {"type": "integer", "minimum": 1},
                "rrc_scale_min": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "rrc_ratio": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "jitter": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                "jitter_p": {"type": "number", "minimum": 0, "maximum": 1},
                "grayscale_p": {"type": "number", "minimum": 0, "maximum": 1},
                "ssl_mode": {"type": "boolean"},
                "blur_sigma": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "blur_p": {"type": "number", "minimum": 0, "maximum": 1},
                "hflip_p": {"type": "number", "minimum": 0, "maximum": 1},
                "vflip_p": {"type": "number", "minimum": 0, "maximum": 1},
                "segmentation_mode": {"type": "boolean"},
                "mean": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                "std": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                "ablate": {"type": "array", "items": {"type": "string"}},
            },
        },
    },
}

SEG_CLASS_NAMES = (
    "background", "stroma", "benign_epithelium",
    "gleason_3", "gleason_4", "gleason_5",
)

_HASH_KEYS = ("name", "kind", "sampling", "tissue", "split", "labels",
              "filters", "rebalance", "seed")


@dataclass(frozen=True)
class CompileConfig:
    name: str
    corpus: Path
    out: Path
    kind: str
    sampling: SampleSpec
    split: SplitPlan
    label_policy: str
    class_map: dict[str, str] | None
    annotation_tau: float
    classes: tuple[str, ...]
    filters: dict[str, str]
    rebalance: bool
    seed: int
    jobs: int
    work_mpp: float
    min_component_px: int
    emit_tissue_masks: bool
    augment: AugmentConfig | None
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def task(self) -> str:
        return "segmentation" if self.label_policy == "mask" else "classification"

    def config_hash(self) -> str:
        doc = {k: self.raw.get(k) for k in _HASH_KEYS}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def augment_from_dict(doc: dict) -> AugmentConfig:
    kwargs: dict[str, Any] = dict(doc)
    for key in ("rrc_ratio", "jitter", "blur_sigma", "mean", "std"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if "ablate" in kwargs:
        kwargs["ablate"] = frozenset(kwargs["ablate"])
    try:
        return AugmentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad augment section: {exc}") from exc


def parse_config(
    doc: dict,
    base_dir: Path | None = None,
    out: Path | None = None,
    seed: int | None = None,
    jobs: int | None = None,
    emit_tissue_masks: bool = False,
) -> CompileConfig:
    """Validate a config document and resolve CLI overrides."""
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc

    base_dir = base_dir or Path.cwd()
    effective_seed = seed if seed is not None else int(doc.get("seed", 0))
    sampling_doc = dict(doc["sampling"])
    labels = doc["labels"]
    policy = labels["policy"]

    try:
        sampling = SampleSpec(seed=effective_seed, **sampling_doc)
        split = SplitPlan(
            fractions=tuple(doc["split"]["fractions"]),
            strategy=doc["split"]["strategy"],
            seed=effective_seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if policy == "organ":
        class_map = labels.get("class_map")
        classes = tuple(sorted(set(class_map.values()))) if class_map \
            else tuple(labels.get("classes", ()))
        if class_map is None and not classes:
            raise ConfigError("organ policy needs class_map or classes")
    elif policy == "camelyon":
        class_map = None
        classes = ("normal", "tumor")
    else:
        class_map = None
        classes = tuple(labels.get("classes", SEG_CLASS_NAMES))

    tissue = doc.get("tissue", {})
    corpus = Path(doc["corpus"])
    if not corpus.is_absolute():
        corpus = base_dir / corpus

    if out is None:
        raise ConfigError("output directory required (--out)")

    return CompileConfig(
        name=doc["name"],
        corpus=corpus,
        out=Path(out),
        kind=doc.get("kind", "custom"),
        sampling=sampling,
        split=split,
        label_policy=policy,
        class_map=dict(class_map) if class_map else None,
        annotation_tau=float(labels.get("annotation_tau", 1.0)),
        classes=classes,
        filters=dict(doc.get("filters", {})),
        rebalance=bool(doc.get("rebalance", False)),
        seed=effective_seed,
        jobs=jobs if jobs is not None else int(doc.get("jobs", 1)),
        work_mpp=float(tissue.get("work_mpp", 8.0)),
        min_component_px=int(tissue.get("min_component_px", 64)),
        emit_tissue_masks=emit_tissue_masks,
        augment=augment_from_dict(doc["augment"]) if "augment" in doc else None,
        raw={**doc, "seed": effective_seed},
    )


def load_config(path: str | Path, **overrides) -> CompileConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(doc, base_dir=path.parent, **overrides)
