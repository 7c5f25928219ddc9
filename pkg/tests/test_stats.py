from __future__ import annotations

import numpy as np
import pytest

from patchforge.errors import ChannelMismatch, EmptyAccumulator
from patchforge.raster import Raster
from patchforge.stats import ChannelMoments, finalize, merge, update, update_image_mean


def random_corpus(n: int, seed: int = 0, size: int = 12) -> list[Raster]:
    rng = np.random.default_rng(seed)
    return [Raster(rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)) for _ in range(n)]


def two_pass_oracle(images: list[Raster]) -> tuple[np.ndarray, np.ndarray]:
    """Direct mean/std over the concatenated pixels, independent of streaming."""
    pixels = np.concatenate([img.to_float().reshape(-1, 3) for img in images])
    mean = pixels.mean(axis=0)
    std = np.sqrt(((pixels - mean) ** 2).mean(axis=0))
    return mean, std


class TestUpdate:
    def test_all_zero_image(self):
        acc = update(ChannelMoments.empty(), Raster(np.zeros((8, 8, 3), dtype=np.uint8)))
        out = finalize(acc)
        assert np.array_equal(out.mean, np.zeros(3))
        assert np.array_equal(out.std, np.zeros(3))

    def test_constant_image(self):
        # 0.5 has an exact 8-bit representation path via float input
        img = Raster(np.full((10, 10, 3), 0.5))
        out = finalize(update(ChannelMoments.empty(), img))
        assert np.array_equal(out.mean, np.full(3, 0.5))
        assert np.array_equal(out.std, np.zeros(3))

    def test_matches_two_pass_oracle(self):
        corpus = random_corpus(60, seed=1)
        acc = ChannelMoments.empty()
        for img in corpus:
            acc = update(acc, img)
        out = finalize(acc)
        mean, std = two_pass_oracle(corpus)
        assert np.max(np.abs(out.mean - mean)) <= 1e-6
        assert np.max(np.abs(out.std - std)) <= 1e-6

    def test_single_image_exact(self):
        img = random_corpus(1, seed=9)[0]
        out = finalize(update(ChannelMoments.empty(), img))
        mean, std = two_pass_oracle([img])
        assert np.array_equal(out.mean, mean)
        assert np.array_equal(out.std, std)

    def test_channel_mismatch(self):
        with pytest.raises(ChannelMismatch):
            update(ChannelMoments.empty(3), Raster(np.zeros((4, 4, 1), dtype=np.uint8)))


class TestMerge:
    def test_merge_with_empty_is_identity(self):
        acc = update(ChannelMoments.empty(), random_corpus(1)[0])
        for merged in (merge(acc, ChannelMoments.empty()), merge(ChannelMoments.empty(), acc)):
            assert merged.count == acc.count
            assert np.array_equal(merged.mean, acc.mean)
            assert np.array_equal(merged.m2, acc.m2)

    def test_symmetry(self):
        corpus = random_corpus(8, seed=2)
        a = ChannelMoments.empty()
        b = ChannelMoments.empty()
        for img in corpus[:3]:
            a = update(a, img)
        for img in corpus[3:]:
            b = update(b, img)
        ab, ba = merge(a, b), merge(b, a)
        assert np.max(np.abs(ab.mean - ba.mean)) <= 1e-12
        assert np.max(np.abs(ab.m2 - ba.m2)) / max(ab.m2.max(), 1) <= 1e-12

    def test_chunked_folds_match_single_stream(self):
        corpus = random_corpus(24, seed=3)
        single = ChannelMoments.empty()
        for img in corpus:
            single = update(single, img)
        want = finalize(single)
        for k in (2, 3, 8):
            chunks = [ChannelMoments.empty() for _ in range(k)]
            for i, img in enumerate(corpus):
                chunks[i % k] = update(chunks[i % k], img)
            acc = ChannelMoments.empty()
            for chunk in chunks:
                acc = merge(acc, chunk)
            got = finalize(acc)
            assert np.max(np.abs(got.mean - want.mean)) <= 1e-9
            assert np.max(np.abs(got.std - want.std)) <= 1e-9


class TestFinalize:
    def test_two_pixel_hand_arithmetic(self):
        # pixels 0 and 1 in one channel: mean 0.5, population std 0.5
        img = Raster(np.array([[[0.0]], [[1.0]]]))
        out = finalize(update(ChannelMoments.empty(1), img))
        assert out.mean[0] == 0.5
        assert out.std[0] == 0.5

    def test_count_one_degenerate(self):
        acc = update_image_mean(ChannelMoments.empty(), random_corpus(1)[0])
        out = finalize(acc)
        assert out.degenerate
        assert np.array_equal(out.std, np.zeros(3))

    def test_empty_raises(self):
        with pytest.raises(EmptyAccumulator):
            finalize(ChannelMoments.empty())


class TestPerImageMeanMode:
    def test_matches_direct_mean_of_means(self):
        corpus = random_corpus(20, seed=4)
        acc = ChannelMoments.empty()
        for img in corpus:
            acc = update_image_mean(acc, img)
        out = finalize(acc)
        means = np.array([img.to_float().reshape(-1, 3).mean(axis=0) for img in corpus])
        assert np.max(np.abs(out.mean - means.mean(axis=0))) <= 1e-12
        want_std = np.sqrt(((means - means.mean(axis=0)) ** 2).mean(axis=0))
        assert np.max(np.abs(out.std - want_std)) <= 1e-12
