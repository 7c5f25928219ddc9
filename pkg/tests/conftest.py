"""Shared fixtures: synthetic slides and corpora."""
from __future__ import annotations

import numpy as np
import pytest

from patchforge.rng import generator
from patchforge.slide import open_slide, write_slide


def checker_image(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Low-entropy RGB test image (compresses well, still non-trivial)."""
    gen = generator(seed, "checker")
    base = gen.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    reps = (h + 7) // 8, (w + 7) // 8
    return np.tile(base, (reps[0], reps[1], 1))[:h, :w, :]


def disk_image(side: int, radius: int, bg: int = 245, fg: int = 90) -> np.ndarray:
    """White background with one centered dark disk (synthetic tissue)."""
    yy, xx = np.mgrid[0:side, 0:side]
    center = (side - 1) / 2
    disk = (yy - center) ** 2 + (xx - center) ** 2 <= radius ** 2
    img = np.full((side, side, 3), bg, dtype=np.uint8)
    img[disk] = fg
    return img


@pytest.fixture
def disk_slide(tmp_path):
    """One-level slide: 512 px at 2 um/px, dark disk of radius 200 px."""
    img = disk_image(512, 200)
    path = write_slide(tmp_path / "disk", "disk-01", img, 2.0)
    return open_slide(path)


@pytest.fixture
def pyramid_slide(tmp_path):
    """Three-level slide (downsamples 1/4/16) at 0.25 um/px, 1024 px base."""
    img = checker_image(1024, 1024, seed=3)
    path = write_slide(tmp_path / "pyr", "pyr-01", img, 0.25, downsamples=(1.0, 4.0, 16.0))
    return open_slide(path)
