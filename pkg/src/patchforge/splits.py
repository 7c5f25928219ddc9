"""Slide-level splits, ISUP stratification, class rebalancing, subsets.

All strategies assign whole slides, never individual patches, so patches
from one slide can never leak across splits. Split maps are a pure
function of (slide id set, metadata, plan): ids are sorted before the
seeded shuffle, so input order and worker count are irrelevant.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyCorpus, MissingGrade, MissingOrigin
from .rng import generator
from .sampler import PatchRecord

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class SplitPlan:
    fractions: tuple[float, float, float]
    strategy: str = "slide_level"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in ("slide_level", "stratified_isup", "source_constrained"):
            raise ValueError(f"unknown split strategy {self.strategy!r}")
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ValueError("fractions must be three non-negative reals")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")


def largest_remainder_counts(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer counts summing to n, proportional by largest remainder."""
    exact = [n * f for f in fractions]
    counts = [math.floor(e) for e in exact]
    leftover = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _shuffled_partition(ids: list[str], fractions, gen) -> dict[str, str]:
    ids = sorted(ids)
    perm = gen.permutation(len(ids))
    counts = largest_remainder_counts(len(ids), fractions)
    out: dict[str, str] = {}
    cursor = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for k in range(cursor, cursor + count):
            out[ids[perm[k]]] = name
        cursor += count
    return out


def slide_level_split(slide_ids: Iterable[str], plan: SplitPlan) -> dict[str, str]:
    """Seeded shuffle of slide ids partitioned by cumulative fractions."""
    ids = list(slide_ids)
    if not ids:
        raise EmptyCorpus("no slides to split")
    gen = generator(plan.seed, "split", "slide_level")
    return _shuffled_partition(ids, plan.fractions, gen)


def stratified_isup_split(
    slides: dict[str, dict[str, str]], plan: SplitPlan
) -> dict[str, str]:
    """Independent slide-level split inside each ISUP stratum.

    ``slides`` maps slide id -> metadata; every slide needs an "isup" key.
    Per-grade counts land within one slide of the fractional targets.
    """
    if not slides:
        raise EmptyCorpus("no slides to split")
    strata: dict[str, list[str]] = {}
    for sid, meta in slides.items():
        grade = meta.get("isup")
        if grade is None:
            raise MissingGrade(f"slide {sid} has no ISUP grade")
        strata.setdefault(grade, []).append(sid)
    out: dict[str, str] = {}
    for grade in sorted(strata):
        gen = generator(plan.seed, "split", "stratified_isup", grade)
        out.update(_shuffled_partition(strata[grade], plan.fractions, gen))
    return out


def source_constrained_split(
    slides: dict[str, dict[str, str]], plan: SplitPlan
) -> dict[str, str]:
    """Original test slides stay test; train-origin slides split train/val.

    Train/val fractions are renormalized over the train-origin pool.
    """
    if not slides:
        raise EmptyCorpus("no slides to split")
    train_pool: list[str] = []
    out: dict[str, str] = {}
    for sid, meta in slides.items():
        origin = meta.get("origin")
        if origin == "test":
            out[sid] = "test"
        elif origin == "train":
            train_pool.append(sid)
        else:
            raise MissingOrigin(f"slide {sid} has origin {origin!r}, need train|test")
    if not any(v == "test" for v in out.values()):
        logger.warning("source-constrained split: no test-origin slides, test set empty")
    f_train, f_val, _ = plan.fractions
    denom = f_train + f_val
    if denom <= 0:
        raise ValueError("source-constrained split needs train + val fractions > 0")
    gen = generator(plan.seed, "split", "source_constrained")
    inner = _shuffled_partition(
        train_pool, (f_train / denom, f_val / denom, 0.0), gen)
    out.update(inner)
    return out


def rebalance_classes(records: Sequence[PatchRecord], seed: int) -> list[PatchRecord]:
    """Discard records at random until every class count equals the minimum.

    Output is a subsequence of the input: relative order is preserved.
    """
    by_label: dict[str, list[int]] = {}
    for idx, rec in enumerate(records):
        if rec.label is None:
            raise ValueError(f"record {idx} has no class label")
        by_label.setdefault(rec.label, []).append(idx)
    if not by_label:
        return []
    floor_count = min(len(v) for v in by_label.values())
    drop: set[int] = set()
    for label in sorted(by_label):
        indices = by_label[label]
        excess = len(indices) - floor_count
        if excess > 0:
            gen = generator(seed, "rebalance", label)
            chosen = gen.choice(len(indices), size=excess, replace=False)
            drop.update(indices[i] for i in chosen)
    return [rec for idx, rec in enumerate(records) if idx not in drop]


def fraction_subset(
    records: Sequence[PatchRecord], fraction: float, seed: int
) -> list[PatchRecord]:
    """Keep ceil(fraction x #slides) whole slides, all their records intact."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1.0:
        return list(records)
    slide_ids = sorted({rec.slide_id for rec in records})
    keep_n = math.ceil(fraction * len(slide_ids))
    gen = generator(seed, "fraction-subset")
    chosen = set(
        slide_ids[i] for i in gen.choice(len(slide_ids), size=keep_n, replace=False)
    )
    return [rec for rec in records if rec.slide_id in chosen]


def export_split_csv(split_map: dict[str, str], path: str | Path) -> None:
    """Write the slide -> split map as ``slide_id,split`` CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "split"])
        for sid in sorted(split_map):
            writer.writerow([sid, split_map[sid]])
