"""Golden-vector parity between the bindings and the core pipeline."""
from __future__ import annotations

import numpy as np
import pytest

from patchforge.augment import AugRng, AugmentConfig, apply_eval, apply_train
from patchforge.compile import compile_dataset
from patchforge.config import parse_config
from patchforge.errors import ManifestError
from patchforge.raster import load_png
from patchforge.rng import generator
from patchforge.slide import write_slide
import patchforge.vitgeom as core_vitgeom

import patchforge_train as bindings
from patchforge_train import open_dataset


def disk_image(side, radius, bg=244, fg=82):
    yy, xx = np.mgrid[0:side, 0:side]
    c = (side - 1) / 2
    img = np.full((side, side, 3), bg, dtype=np.uint8)
    img[(yy - c) ** 2 + (xx - c) ** 2 <= radius ** 2] = fg
    return img


@pytest.fixture(scope="module")
def compiled(tmp_path_factory):
    """4 slides x 50 patches = 200 golden records."""
    tmp = tmp_path_factory.mktemp("bindcorpus")
    corpus = tmp / "corpus"
    corpus.mkdir()
    organs = ("lung", "brain")
    for i in range(4):
        img = disk_image(640, 288, fg=70 + 9 * i)
        write_slide(corpus / f"s{i:02d}", f"s{i:02d}", img, 3.125,
                    metadata={"organ": organs[i % 2]})
    doc = {
        "name": "golden",
        "kind": "custom",
        "corpus": str(corpus),
        "seed": 17,
        "sampling": {"mode": "random", "scale_um": 200.0, "out_px": 64,
                     "patches_per_slide": 50, "tissue_tau": 0.5},
        "tissue": {"work_mpp": 3.125, "min_component_px": 16},
        "split": {"strategy": "slide_level", "fractions": [0.5, 0.25, 0.25]},
        "labels": {"policy": "organ", "class_map": {"lung": "lung", "brain": "brain"}},
    }
    return compile_dataset(parse_config(doc, out=tmp / "out"))


TRAIN_AUG = AugmentConfig(out_px=48, ssl_mode=True, mean=(0.6, 0.45, 0.55),
                          std=(0.1, 0.2, 0.15))


class TestGoldenParity:
    def test_eval_images_byte_identical_over_all_records(self, compiled):
        total = 0
        for split in ("train", "val", "test"):
            ds = open_dataset(compiled.path, split, mode="eval")
            records = [r for r in compiled.records if r["split"] == split]
            assert len(ds) == len(records)
            for i, rec in enumerate(records):
                got, label = ds[i]
                img = load_png(compiled.root / rec["path"])
                want = apply_eval(img, "custom", ds._mean, ds._std)
                want = np.ascontiguousarray(want.transpose(2, 0, 1))
                assert got.tobytes() == want.tobytes()
                assert compiled.header["classes"][label] == rec["label"]
                total += 1
        assert total == 200

    def test_train_images_byte_identical(self, compiled):
        ds = open_dataset(compiled.path, "train", mode="train",
                          augment=TRAIN_AUG, epoch_seed=5)
        records = [r for r in compiled.records if r["split"] == "train"]
        for i, rec in enumerate(records):
            got, _ = ds[i]
            img = load_png(compiled.root / rec["path"])
            want, _ = apply_train(img, None, TRAIN_AUG, AugRng(5, i))
            want = np.ascontiguousarray(want.transpose(2, 0, 1))
            assert got.tobytes() == want.tobytes()

    def test_iteration_order_matches_manifest(self, compiled):
        for split in ("train", "val", "test"):
            ds = open_dataset(compiled.path, split)
            records = [r for r in compiled.records if r["split"] == split]
            for i, rec in enumerate(records):
                assert ds.record(i) is ds._records[i]
                assert ds.record(i)["slide_id"] == rec["slide_id"]
                assert ds.record(i)["x0_um"] == rec["x0_um"]

    def test_same_index_and_epoch_identical(self, compiled):
        ds = open_dataset(compiled.path, "train", mode="train",
                          augment=TRAIN_AUG, epoch_seed=9)
        a, _ = ds[3]
        b, _ = ds[3]
        assert a.tobytes() == b.tobytes()
        ds.set_epoch(10)
        c, _ = ds[3]
        assert a.tobytes() != c.tobytes()

    def test_shuffle_reorders_but_preserves_record_streams(self, compiled):
        ds = open_dataset(compiled.path, "train", mode="train",
                          augment=TRAIN_AUG, epoch_seed=2)
        by_slide = {}
        for i in range(len(ds)):
            buf, _ = ds[i]
            rec = ds.record(i)
            by_slide[(rec["slide_id"], rec["x0_um"])] = buf.tobytes()
        ds.shuffle(31)
        for i in range(len(ds)):
            buf, _ = ds[i]
            rec = ds.record(i)
            assert by_slide[(rec["slide_id"], rec["x0_um"])] == buf.tobytes()

    def test_buffer_layout(self, compiled):
        ds = open_dataset(compiled.path, "val")
        buf, _ = ds[0]
        assert buf.dtype == np.float32
        assert buf.flags["C_CONTIGUOUS"]
        assert buf.shape[0] == 3


@pytest.fixture(scope="module")
def cropped_kind(tmp_path_factory):
    """512 px patches of a ptcga-like kind: eval center-crops to 287."""
    tmp = tmp_path_factory.mktemp("evalcrop")
    corpus = tmp / "corpus"
    corpus.mkdir()
    for i in range(2):
        img = disk_image(768, 330, fg=74 + 8 * i)
        write_slide(corpus / f"c{i}", f"c{i}", img, 0.390625,
                    metadata={"organ": "lung"})
    doc = {
        "name": "evalcrop",
        "kind": "ptcga200",
        "corpus": str(corpus),
        "seed": 8,
        "sampling": {"mode": "random", "scale_um": 200.0, "out_px": 512,
                     "patches_per_slide": 3, "tissue_tau": 0.5},
        "tissue": {"work_mpp": 0.390625, "min_component_px": 16},
        "split": {"strategy": "slide_level", "fractions": [0.5, 0.5, 0.0]},
        "labels": {"policy": "organ", "class_map": {"lung": "lung"}},
    }
    return compile_dataset(parse_config(doc, out=tmp / "out"))


class TestEvalCropKind:
    def test_eval_crops_287_and_matches_core(self, cropped_kind):
        ds = open_dataset(cropped_kind.path, "train")
        for i in range(len(ds)):
            buf, _ = ds[i]
            assert buf.shape == (3, 287, 287)
            rec = ds.record(i)
            img = load_png(cropped_kind.root / rec["path"])
            want = apply_eval(img, "ptcga200", ds._mean, ds._std)
            assert buf.tobytes() == np.ascontiguousarray(
                want.transpose(2, 0, 1)).tobytes()


class TestHelpersParity:
    def test_helpers_are_core_implementations(self):
        assert bindings.retile is core_vitgeom.retile
        assert bindings.resize_pos_embed is core_vitgeom.resize_pos_embed
        assert bindings.lr_at is core_vitgeom.lr_at

    def test_shared_vectors_within_1e6(self):
        gen = generator(0, "parity-vectors")
        seq = gen.normal(size=(17, 8))
        grid = bindings.TokenGrid(17, 8, 4, 4, True)
        delta = np.abs(bindings.retile(seq, grid) - core_vitgeom.retile(seq, grid))
        assert delta.max() <= 1e-6

        table = gen.normal(size=(10, 6))
        pe = bindings.PosEmbed(table, 3, 3, True)
        a = bindings.resize_pos_embed(pe, 5, 7).table
        b = core_vitgeom.resize_pos_embed(pe, 5, 7).table
        assert np.abs(a - b).max() <= 1e-6

        for step in (0, 10, 55, 60):
            assert abs(bindings.lr_at(step, 60, 10, 5e-4, 4096)
                       - core_vitgeom.lr_at(step, 60, 10, 5e-4, 4096)) <= 1e-6


class TestOpenDataset:
    def test_bad_path(self, tmp_path):
        with pytest.raises((OSError, ManifestError)):
            open_dataset(tmp_path / "missing.jsonl", "train")

    def test_bad_split_name(self, compiled):
        with pytest.raises(ValueError):
            open_dataset(compiled.path, "validation")

    def test_train_mode_needs_augment(self, compiled):
        with pytest.raises(ValueError):
            open_dataset(compiled.path, "train", mode="train")

    def test_index_out_of_range(self, compiled):
        ds = open_dataset(compiled.path, "test")
        with pytest.raises(IndexError):
            ds[len(ds)]


@pytest.fixture(scope="module")
def seg_compiled(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("segbind")
    corpus = tmp / "corpus"
    corpus.mkdir()
    masks = tmp / "masks"
    masks.mkdir()
    for i in range(2):
        side = 512
        img = disk_image(side, 200, fg=90)
        labels = np.zeros((side, side, 1), dtype=np.uint8)
        yy, xx = np.mgrid[0:side, 0:side]
        c = (side - 1) / 2
        labels[(yy - c) ** 2 + (xx - c) ** 2 <= 200 ** 2] = 1
        labels[(yy - c) ** 2 + (xx - c) ** 2 <= 90 ** 2] = 3 + i
        write_slide(masks / f"m{i}", f"m{i}-ann", labels, 2.0)
        write_slide(corpus / f"p{i}", f"p{i}", img, 2.0,
                    metadata={"isup": str(i)}, annotation=f"../../masks/m{i}")
    doc = {
        "name": "segbind",
        "kind": "segpanda200",
        "corpus": str(corpus),
        "seed": 4,
        "sampling": {"mode": "grid", "scale_um": 256.0, "out_px": 96,
                     "stride_um": 128.0, "tissue_tau": 0.3},
        "tissue": {"work_mpp": 2.0, "min_component_px": 16},
        "split": {"strategy": "slide_level", "fractions": [0.5, 0.5, 0.0]},
        "labels": {"policy": "mask"},
    }
    return compile_dataset(parse_config(doc, out=tmp / "out"))


class TestSegmentationBinding:
    def test_train_mode_co_transforms_mask(self, seg_compiled):
        aug = AugmentConfig(out_px=64, segmentation_mode=True,
                            mean=(0.5,) * 3, std=(0.5,) * 3)
        ds = open_dataset(seg_compiled.path, "train", mode="train",
                          augment=aug, epoch_seed=1)
        assert len(ds) > 0
        for i in range(len(ds)):
            buf, mask = ds[i]
            assert buf.shape == (3, 64, 64)
            assert mask.shape == (64, 64)
            assert set(np.unique(mask)) <= set(range(6))
            rec = ds.record(i)
            img = load_png(seg_compiled.root / rec["path"])
            full_mask = load_png(seg_compiled.root / rec["mask_ref"])
            want_img, want_mask = apply_train(img, full_mask, aug, AugRng(1, i))
            assert buf.tobytes() == np.ascontiguousarray(
                want_img.transpose(2, 0, 1)).tobytes()
            assert mask.tobytes() == np.ascontiguousarray(want_mask).tobytes()

    def test_eval_mode_returns_full_mask(self, seg_compiled):
        ds = open_dataset(seg_compiled.path, "val")
        buf, mask = ds[0]
        # segpanda kind: no eval crop, image stays at compiled out_px
        assert buf.shape == (3, 96, 96)
        assert mask.shape == (96, 96)
