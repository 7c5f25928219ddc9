"""Streaming, mergeable per-channel mean/std accumulators.

Two interpretations of dataset RGB statistics are supported: the standard
per-pixel statistic (every pixel is a sample) and a per-image-mean mode
(every image contributes its channel means as one sample). Variance is
population style, std = sqrt(m2 / count).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ChannelMismatch, EmptyAccumulator
from .raster import Raster


@dataclass(frozen=True)
class ChannelMoments:
    count: int = 0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    m2: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def empty(cls, channels: int = 3) -> "ChannelMoments":
        return cls(0, np.zeros(channels), np.zeros(channels))

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


class StatsResult(NamedTuple):
    mean: np.ndarray
    std: np.ndarray
    degenerate: bool


def _merge_block(acc: ChannelMoments, n: int, mean: np.ndarray, m2: np.ndarray) -> ChannelMoments:
    if acc.count == 0:
        return ChannelMoments(n, mean, m2)
    if n == 0:
        return acc
    total = acc.count + n
    delta = mean - acc.mean
    new_mean = acc.mean + delta * (n / total)
    new_m2 = acc.m2 + m2 + delta * delta * (acc.count * n / total)
    return ChannelMoments(total, new_mean, new_m2)


def update(acc: ChannelMoments, img: Raster) -> ChannelMoments:
    """Fold every pixel of img (normalized to [0, 1]) into the accumulator."""
    if img.channels != acc.channels:
        raise ChannelMismatch(f"image has {img.channels} channels, accumulator {acc.channels}")
    pixels = img.to_float().reshape(-1, img.channels)
    mean = pixels.mean(axis=0)
    m2 = ((pixels - mean) ** 2).sum(axis=0)
    return _merge_block(acc, pixels.shape[0], mean, m2)


def update_image_mean(acc: ChannelMoments, img: Raster) -> ChannelMoments:
    """Fold one sample, the image's channel means, into the accumulator."""
    if img.channels != acc.channels:
        raise ChannelMismatch(f"image has {img.channels} channels, accumulator {acc.channels}")
    sample = img.to_float().reshape(-1, img.channels).mean(axis=0)
    return _merge_block(acc, 1, sample, np.zeros_like(sample))


def merge(a: ChannelMoments, b: ChannelMoments) -> ChannelMoments:
    """Combine two accumulators (parallel-variance merge); order-insensitive."""
    if a.channels != b.channels:
        raise ChannelMismatch(f"cannot merge {a.channels}- and {b.channels}-channel accumulators")
    return _merge_block(a, b.count, b.mean, b.m2)


def finalize(acc: ChannelMoments) -> StatsResult:
    """Mean and population std; count == 1 yields std 0 with a degenerate flag."""
    if acc.count == 0:
        raise EmptyAccumulator("no samples accumulated")
    if acc.count == 1:
        return StatsResult(acc.mean.copy(), np.zeros(acc.channels), True)
    return StatsResult(acc.mean.copy(), np.sqrt(acc.m2 / acc.count), False)
