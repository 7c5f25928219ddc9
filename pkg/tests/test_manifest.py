from __future__ import annotations

import json

import numpy as np
import pytest

from patchforge.cli import main
from patchforge.compile import compile_dataset, enumerate_corpus
from patchforge.config import load_config, parse_config
from patchforge.errors import ConfigError, UnknownPreset
from patchforge.manifest import read_manifest, verify_manifest
from patchforge.presets import dataset_preset, protocol
from patchforge.raster import save_png, Raster
from patchforge.rng import generator
from patchforge.slide import write_slide

from conftest import disk_image


def build_corpus(root, n_slides=10, organs=("lung", "brain"), side=640, mpp=3.125):
    """Synthetic classification corpus: full-frame tissue disks, tiny PNGs."""
    root.mkdir(parents=True, exist_ok=True)
    for i in range(n_slides):
        img = disk_image(side, int(side * 0.45), bg=244, fg=70 + (i * 7) % 60)
        write_slide(
            root / f"s{i:03d}", f"s{i:03d}", img, mpp,
            metadata={"organ": organs[i % len(organs)]},
        )
    return root


def demo_config(corpus, n_patches=20, seed=5):
    return {
        "name": "demo",
        "kind": "custom",
        "corpus": str(corpus),
        "seed": seed,
        "sampling": {
            "mode": "random", "scale_um": 200.0, "out_px": 64,
            "patches_per_slide": n_patches, "tissue_tau": 0.5,
        },
        "tissue": {"work_mpp": 3.125, "min_component_px": 16},
        "split": {"strategy": "slide_level", "fractions": [0.8, 0.1, 0.1]},
        "labels": {"policy": "organ",
                   "class_map": {"lung": "lung", "brain": "brain"}},
    }


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return build_corpus(tmp_path_factory.mktemp("corpus"), n_slides=10)


class TestCompile:
    def test_counts_and_verify(self, corpus, tmp_path):
        cfg = parse_config(demo_config(corpus), out=tmp_path / "out")
        manifest = compile_dataset(cfg)
        assert manifest.header["counts"] == {"train": 160, "val": 20, "test": 20}
        assert manifest.header["slide_counts"] == {"train": 8, "val": 1, "test": 1}
        assert manifest.header["mpp"] == pytest.approx(200.0 / 64)
        report = verify_manifest(manifest.path)
        assert report.ok, report.findings
        # stats present and plausible for dark-disk-on-white tissue
        stats = manifest.header["stats"]["per_pixel"]
        assert stats["count"] == 160 * 64 * 64
        assert all(0.1 < m < 0.9 for m in stats["mean"])

    def test_rerun_byte_identical(self, corpus, tmp_path):
        cfg_a = parse_config(demo_config(corpus), out=tmp_path / "a")
        cfg_b = parse_config(demo_config(corpus), out=tmp_path / "b")
        ma = compile_dataset(cfg_a)
        mb = compile_dataset(cfg_b)
        assert ma.path.read_bytes() == mb.path.read_bytes()

    def test_jobs_invariance(self, corpus, tmp_path):
        blobs = []
        for jobs in (1, 3):
            cfg = parse_config(demo_config(corpus), out=tmp_path / f"j{jobs}", jobs=jobs)
            blobs.append(compile_dataset(cfg).path.read_bytes())
        assert blobs[0] == blobs[1]

    def test_seed_changes_dataset(self, corpus, tmp_path):
        ma = compile_dataset(parse_config(demo_config(corpus, seed=1), out=tmp_path / "s1"))
        mb = compile_dataset(parse_config(demo_config(corpus, seed=2), out=tmp_path / "s2"))
        assert ma.path.read_bytes() != mb.path.read_bytes()

    def test_filters_and_empty_error(self, corpus, tmp_path):
        doc = demo_config(corpus)
        doc["filters"] = {"provider": "nowhere"}
        cfg = parse_config(doc, out=tmp_path / "f")
        with pytest.raises(ConfigError):
            compile_dataset(cfg)

    def test_failure_removes_partial_output(self, corpus, tmp_path):
        doc = demo_config(corpus)
        doc["labels"] = {"policy": "organ", "class_map": {"lung": "lung"}}  # brain missing
        cfg = parse_config(doc, out=tmp_path / "fail")
        with pytest.raises(ConfigError):
            compile_dataset(cfg)
        assert not (tmp_path / "fail" / "demo").exists()

    def test_emit_tissue_masks(self, corpus, tmp_path):
        from PIL import Image
        cfg = parse_config(demo_config(corpus), out=tmp_path / "tm", emit_tissue_masks=True)
        manifest = compile_dataset(cfg)
        masks = sorted((manifest.root / "tissue_masks").glob("*.png"))
        assert len(masks) == 10
        with Image.open(masks[0]) as img:
            assert img.mode == "1"


class TestVerifyFaults:
    @pytest.fixture
    def compiled(self, corpus, tmp_path):
        cfg = parse_config(demo_config(corpus, n_patches=6), out=tmp_path / "v")
        return compile_dataset(cfg)

    def edit_manifest(self, manifest, mutate):
        lines = manifest.path.read_text().splitlines()
        rows = [json.loads(l) for l in lines[1:]]
        mutate(rows)
        manifest.path.write_text(
            "\n".join([lines[0]] + [json.dumps(r, sort_keys=True) for r in rows]) + "\n")

    def test_slide_in_two_splits(self, compiled):
        def mutate(rows):
            sid = rows[0]["slide_id"]
            victim = next(r for r in rows if r["slide_id"] == sid)
            victim["split"] = "val" if victim["split"] != "val" else "test"
        self.edit_manifest(compiled, mutate)
        report = verify_manifest(compiled.path)
        assert any("appears in splits" in f for f in report.findings)

    def test_missing_file(self, compiled):
        victim = compiled.records[3]
        (compiled.root / victim["path"]).unlink()
        report = verify_manifest(compiled.path)
        assert any("missing file" in f for f in report.findings)

    def test_hash_mismatch(self, compiled):
        victim = compiled.records[2]
        save_png(Raster(np.zeros((64, 64, 3), dtype=np.uint8)),
                 compiled.root / victim["path"])
        assert verify_manifest(compiled.path).ok          # size/name still fine
        report = verify_manifest(compiled.path, check_hash=True)
        assert any("hash mismatch" in f for f in report.findings)


class TestSegmentationCompile:
    def build_seg_corpus(self, root, n_slides=4):
        root.mkdir(parents=True, exist_ok=True)
        gen = generator(1, "seg-corpus")
        for i in range(n_slides):
            side = 512
            img = disk_image(side, 210, bg=250, fg=95)
            labels = np.zeros((side, side, 1), dtype=np.uint8)
            yy, xx = np.mgrid[0:side, 0:side]
            c = (side - 1) / 2
            labels[(yy - c) ** 2 + (xx - c) ** 2 <= 210 ** 2] = 1
            labels[(yy - c) ** 2 + (xx - c) ** 2 <= 100 ** 2] = int(gen.integers(2, 6))
            write_slide(root / f"mask{i}", f"mask{i}-ann", labels, 2.0)
            write_slide(
                root / f"p{i:02d}", f"p{i:02d}", img, 2.0,
                metadata={"isup": str(i % 3), "provider": "Radboud"},
                annotation=f"../mask{i}",
            )
        return root

    def test_seg_compile_and_verify(self, tmp_path):
        corpus = self.build_seg_corpus(tmp_path / "segcorpus")
        doc = {
            "name": "segdemo",
            "kind": "segpanda200",
            "corpus": str(corpus),
            "seed": 3,
            "sampling": {"mode": "grid", "scale_um": 256.0, "out_px": 64,
                         "stride_um": 128.0, "tissue_tau": 0.3},
            "tissue": {"work_mpp": 2.0, "min_component_px": 16},
            "split": {"strategy": "stratified_isup", "fractions": [0.5, 0.25, 0.25]},
            "labels": {"policy": "mask"},
            "filters": {"provider": "Radboud"},
        }
        cfg = parse_config(doc, out=tmp_path / "segout")
        manifest = compile_dataset(cfg)
        assert manifest.header["task"] == "segmentation"
        assert len(manifest.records) > 0
        assert all(r["mask_ref"] for r in manifest.records)
        assert all(r["label"] is None for r in manifest.records)
        report = verify_manifest(manifest.path, check_hash=True)
        assert report.ok, report.findings
        # histograms recorded with only declared labels
        for rec in manifest.records:
            assert set(map(int, rec["mask_histogram"])) <= set(range(6))


class TestCamelyonCompile:
    def build_cam_corpus(self, root, n_tumor=3, n_normal=3):
        root.mkdir(parents=True, exist_ok=True)
        for i in range(n_tumor):
            img = disk_image(512, 220, bg=248, fg=88)
            ann = {"rings": [[(200, 200), (800, 200), (800, 800), (200, 800)]]}
            ann_path = root / f"t{i:02d}-ann.json"
            ann_path.write_text(json.dumps(ann))
            write_slide(root / f"t{i:02d}", f"t{i:02d}", img, 2.0,
                        metadata={"slide_type": "tumor", "origin": "train" if i else "test"},
                        annotation=f"../t{i:02d}-ann.json")
        for i in range(n_normal):
            img = disk_image(512, 220, bg=248, fg=88)
            write_slide(root / f"n{i:02d}", f"n{i:02d}", img, 2.0,
                        metadata={"slide_type": "normal",
                                  "origin": "train" if i else "test"})
        return root

    def test_camelyon_rebalanced(self, tmp_path):
        corpus = self.build_cam_corpus(tmp_path / "cam")
        doc = {
            "name": "camdemo",
            "kind": "pcam200",
            "corpus": str(corpus),
            "seed": 2,
            "sampling": {"mode": "grid", "scale_um": 200.0, "out_px": 64,
                         "stride_um": 100.0, "tissue_tau": 0.5},
            "tissue": {"work_mpp": 2.0, "min_component_px": 16},
            "split": {"strategy": "source_constrained", "fractions": [0.75, 0.25, 0.0]},
            "labels": {"policy": "camelyon", "annotation_tau": 1.0},
            "rebalance": True,
        }
        cfg = parse_config(doc, out=tmp_path / "camout")
        manifest = compile_dataset(cfg)
        labels = [r["label"] for r in manifest.records]
        assert labels.count("tumor") == labels.count("normal") > 0
        report = verify_manifest(manifest.path)
        assert report.ok, report.findings


class TestConfig:
    def test_schema_rejects_unknown_key(self, corpus, tmp_path):
        doc = demo_config(corpus)
        doc["sampling"]["typo_key"] = 1
        with pytest.raises(ConfigError):
            parse_config(doc, out=tmp_path)

    def test_schema_rejects_bad_fractions(self, corpus, tmp_path):
        doc = demo_config(corpus)
        doc["split"]["fractions"] = [0.8, 0.1]
        with pytest.raises(ConfigError):
            parse_config(doc, out=tmp_path)

    def test_fractions_must_sum_to_one(self, corpus, tmp_path):
        doc = demo_config(corpus)
        doc["split"]["fractions"] = [0.8, 0.1, 0.2]
        with pytest.raises(ConfigError):
            parse_config(doc, out=tmp_path)

    def test_config_hash_ignores_execution_keys(self, corpus, tmp_path):
        a = parse_config(demo_config(corpus), out=tmp_path / "x", jobs=1)
        b = parse_config(demo_config(corpus), out=tmp_path / "y", jobs=8)
        assert a.config_hash() == b.config_hash()
        c = parse_config(demo_config(corpus, seed=99), out=tmp_path / "z")
        assert a.config_hash() != c.config_hash()


class TestPresets:
    def test_dataset_presets_mpp(self):
        for name in ("ptcga200", "pcam200", "segpanda200"):
            preset = dataset_preset(name)
            s = preset["sampling"]
            assert s["scale_um"] / s["out_px"] == 0.390625

    def test_protocol_finetune_default(self):
        doc = protocol("finetune-default")
        assert doc["optimizer"] == {"name": "sgd", "momentum": 0.9, "nesterov": False}
        assert doc["batch_size"] == 512
        assert doc["base_lr"] == 0.05
        assert doc["peak_lr"] == 0.05
        assert doc["weight_decay"] == 0.0
        assert doc["schedule"] == "cosine"
        assert doc["lr_table"][0] == pytest.approx(0.05)
        assert doc["lr_table"][-1] == 0.0

    def test_protocol_pretrain_resnet50(self):
        doc = protocol("pretrain-resnet50")
        assert doc["total"] == 60 and doc["image_px"] == 224
        assert doc["weight_decay"] == 5e-5 and doc["base_lr"] == 5e-4
        assert doc["warmup"] == 10
        assert doc["peak_lr"] == pytest.approx(8e-3)
        assert doc["lr_table"][10] == pytest.approx(8e-3)

    def test_unknown_preset(self):
        with pytest.raises(UnknownPreset):
            protocol("no-such-preset")
        with pytest.raises(UnknownPreset):
            dataset_preset("no-such-dataset")


class TestCli:
    def test_compile_verify_stats_roundtrip(self, corpus, tmp_path, capsys):
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(demo_config(corpus, n_patches=5)))
        out = tmp_path / "cliout"
        assert main(["compile", "--config", str(config_path), "--out", str(out)]) == 0
        manifest_path = out / "demo" / "manifest.jsonl"
        assert main(["verify", "--manifest", str(manifest_path), "--hash"]) == 0
        assert main(["stats", "--manifest", str(manifest_path)]) == 0
        payload = capsys.readouterr().out
        assert '"mode": "per_pixel"' in payload

    def test_verify_finds_fault(self, corpus, tmp_path):
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(demo_config(corpus, n_patches=4)))
        out = tmp_path / "cliout2"
        main(["compile", "--config", str(config_path), "--out", str(out)])
        manifest_path = out / "demo" / "manifest.jsonl"
        victim = read_manifest(manifest_path).records[0]["path"]
        (out / "demo" / victim).unlink()
        assert main(["verify", "--manifest", str(manifest_path)]) == 1

    def test_protocol_and_bad_preset(self, capsys):
        assert main(["protocol", "--preset", "pretrain-vit-s16"]) == 0
        assert json.loads(capsys.readouterr().out)["warmup"] == 15
        assert main(["protocol", "--preset", "bogus"]) == 2

    def test_split_csv(self, corpus, tmp_path):
        out = tmp_path / "map.csv"
        assert main(["split", "--corpus", str(corpus), "--fractions", "0.8,0.1,0.1",
                     "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 11

    def test_subset_fraction(self, corpus, tmp_path, capsys):
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(demo_config(corpus, n_patches=4)))
        out = tmp_path / "subout"
        main(["compile", "--config", str(config_path), "--out", str(out)])
        manifest_path = out / "demo" / "manifest.jsonl"
        capsys.readouterr()
        assert main(["subset", "--manifest", str(manifest_path),
                     "--fraction", "0.5", "--seed", "3"]) == 0
        derived = json.loads(capsys.readouterr().out)["manifest"]
        assert main(["verify", "--manifest", derived]) == 0

    def test_subset_tiny(self, corpus, tmp_path, capsys):
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(demo_config(corpus, n_patches=6)))
        out = tmp_path / "tinyout"
        main(["compile", "--config", str(config_path), "--out", str(out)])
        manifest_path = out / "demo" / "manifest.jsonl"
        capsys.readouterr()
        assert main(["subset", "--manifest", str(manifest_path), "--tiny",
                     "--slides-per-organ", "2", "--patches-per-slide", "3"]) == 0
        payload = json.loads(capsys.readouterr().out)
        total = sum(payload["counts"].values())
        assert total == 2 * 2 * 3

    def test_augment_preview(self, tmp_path):
        config_path = tmp_path / "augcfg.json"
        config_path.write_text(json.dumps({"augment": {"out_px": 64}}))
        out = tmp_path / "grid.png"
        assert main(["augment", "--preview", "--config", str(config_path),
                     "--out", str(out), "--panels", "4"]) == 0
        assert out.is_file()

    def test_export_csv(self, corpus, tmp_path):
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(demo_config(corpus, n_patches=3)))
        out = tmp_path / "csvout"
        main(["compile", "--config", str(config_path), "--out", str(out)])
        csv_path = tmp_path / "records.csv"
        assert main(["export-csv", "--manifest", str(out / "demo" / "manifest.jsonl"),
                     "--out", str(csv_path)]) == 0
        assert csv_path.read_text().startswith("slide_id,split,label")

    def test_usage_error_exit_2(self, corpus, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"name": "x"}))
        assert main(["compile", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_enumerate_corpus_sorted_and_sidecars(tmp_path):
    corpus = tmp_path / "mix"
    corpus.mkdir()
    write_slide(corpus / "bbb", "bbb", disk_image(64, 20), 2.0)
    write_slide(corpus / "aaa", "aaa", disk_image(64, 20), 2.0)
    img_path = corpus / "ccc.png"
    save_png(Raster(disk_image(64, 20)), img_path)
    sidecar = {
        "id": "ccc",
        "levels": [{"width": 64, "height": 64, "downsample": 1.0,
                    "mpp_x": 2.0, "mpp_y": 2.0, "file": "ccc.png"}],
    }
    (corpus / "ccc.json").write_text(json.dumps(sidecar))
    ids = [sid for sid, _ in enumerate_corpus(corpus)]
    assert ids == ["aaa", "bbb", "ccc"]
