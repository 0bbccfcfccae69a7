"""Command-line entry points, exercised in-process through main(argv)."""

import json

import numpy as np
import pytest

from camodet.cli import DEFAULTS, METRIC_NAMES, main
from camodet.dataset import (
    Category,
    DetectionDataset,
    LabeledBox,
    Sample,
    read_annotations,
    write_annotations,
)
from camodet.geometry import Box
from camodet.ioutils import save_image
from camodet.model import load_params


def write_mask(path, rects, size=32, value=255):
    mask = np.zeros((size, size), dtype=np.uint8)
    for x0, y0, x1, y1 in rects:
        mask[y0:y1, x0:x1] = value
    save_image(path, mask)


def boxed_dataset(root, n_boxes=4, size=64):
    """Dataset directory with one image on disk and integer box labels."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    save_image(root / "img_1.png", image)
    labels = []
    for _ in range(n_boxes):
        w = int(rng.integers(4, 20))
        h = int(rng.integers(4, 20))
        x = int(rng.integers(0, size - w))
        y = int(rng.integers(0, size - h))
        labels.append(LabeledBox(Box(x, y, x + w, y + h), category_id=1))
    dataset = DetectionDataset(
        categories=[Category(1, "object")],
        samples=[
            Sample(image_id=1, image_path="img_1.png", width=size, height=size, labels=labels)
        ],
    )
    write_annotations(dataset, root / "ann.json")
    return root


class TestParserBasics:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert "camodet" in capsys.readouterr().out

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["summarize", "--bogus"])
        assert info.value.code == 2

    def test_epilog_documents_kernel_flag(self, capsys):
        with pytest.raises(SystemExit):
            main(["--help"])
        assert "CAMODET_NUMBA" in capsys.readouterr().out

    def test_train_help_shows_defaults(self, capsys):
        with pytest.raises(SystemExit):
            main(["train-toy", "--help"])
        out = capsys.readouterr().out
        assert "0.0003" in out
        assert "0.08" in out

    def test_sfr_help_shows_defaults(self, capsys):
        with pytest.raises(SystemExit):
            main(["sfr-offline", "--help"])
        out = capsys.readouterr().out
        assert "200" in out
        assert "800" in out
        assert "2,3,4" in out

    def test_evaluate_help_names_metrics(self, capsys):
        with pytest.raises(SystemExit):
            main(["evaluate", "--help"])
        out = capsys.readouterr().out
        for name in METRIC_NAMES:
            assert name in out


class TestConvertMasks:
    def test_flat_directory(self, tmp_path, capsys):
        masks = tmp_path / "masks"
        masks.mkdir()
        write_mask(masks / "m0.png", [(2, 3, 8, 6)])
        write_mask(masks / "m1.png", [(1, 1, 5, 5), (10, 10, 20, 20)])
        out = tmp_path / "ann.json"
        assert main(["convert-masks", "--masks", str(masks), "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "2 images" in printed and "3 boxes" in printed and "2 flagged" in printed
        dataset = read_annotations(out)
        assert [c.name for c in dataset.categories] == ["object"]
        assert dataset.samples[0].labels[0].box == Box(2.0, 3.0, 8.0, 6.0)
        assert dataset.samples[0].labels[0].review is False
        assert all(lb.review for lb in dataset.samples[1].labels)

    def test_subdirectories_become_categories(self, tmp_path):
        masks = tmp_path / "masks"
        for name in ("heron", "crab"):
            (masks / name).mkdir(parents=True)
            write_mask(masks / name / "m.png", [(0, 0, 4, 4)])
        out = tmp_path / "ann.json"
        assert main(["convert-masks", "--masks", str(masks), "--out", str(out)]) == 0
        dataset = read_annotations(out)
        assert [c.name for c in dataset.categories] == ["crab", "heron"]
        assert {s.labels[0].category_id for s in dataset.samples} == {1, 2}

    def test_merge_gap(self, tmp_path):
        masks = tmp_path / "masks"
        masks.mkdir()
        write_mask(masks / "m.png", [(0, 0, 4, 4), (6, 0, 10, 4)])
        out = tmp_path / "ann.json"
        assert main(
            ["convert-masks", "--masks", str(masks), "--out", str(out), "--merge-gap", "2"]
        ) == 0
        dataset = read_annotations(out)
        assert len(dataset.samples[0].labels) == 1
        assert dataset.samples[0].labels[0].box == Box(0.0, 0.0, 10.0, 4.0)

    def test_split_recorded(self, tmp_path):
        masks = tmp_path / "masks"
        masks.mkdir()
        write_mask(masks / "m.png", [(0, 0, 4, 4)])
        out = tmp_path / "ann.json"
        main(["convert-masks", "--masks", str(masks), "--out", str(out), "--split", "test"])
        assert read_annotations(out).samples[0].split == "test"

    def test_missing_required_flag(self, tmp_path, capsys):
        assert main(["convert-masks", "--out", str(tmp_path / "x.json")]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error[config]:")
        assert "--masks" in err

    def test_missing_directory(self, tmp_path, capsys):
        code = main(
            ["convert-masks", "--masks", str(tmp_path / "nope"), "--out", str(tmp_path / "x.json")]
        )
        assert code == 2
        assert capsys.readouterr().err.startswith("error[config]:")


class TestSummarize:
    def test_prints_counts(self, tmp_path, capsys):
        root = boxed_dataset(tmp_path / "data")
        assert main(["summarize", "--annotations", str(root / "ann.json")]) == 0
        out = capsys.readouterr().out
        assert "categories" in out and "object" in out

    def test_malformed_annotations(self, tmp_path, capsys):
        bad = tmp_path / "ann.json"
        bad.write_text("{oops")
        assert main(["summarize", "--annotations", str(bad)]) == 2
        assert capsys.readouterr().err.startswith("error[invalid-annotation]:")


class TestSfrOffline:
    def test_writes_outputs(self, tmp_path, capsys):
        root = boxed_dataset(tmp_path / "data", n_boxes=4)
        out = tmp_path / "mosaics"
        code = main(
            [
                "sfr-offline",
                "--annotations", str(root / "ann.json"),
                "--images-root", str(root),
                "--out", str(out),
                "--seed", "0",
                "--grids", "2",
            ]
        )
        assert code == 0
        assert "wrote 1 pseudo-images" in capsys.readouterr().out
        assert (out / "images" / "mosaic_000001.png").exists()
        assert (out / "annotations.json").exists()
        assert (out / "manifest.json").exists()

    def test_missing_seed(self, tmp_path, capsys):
        root = boxed_dataset(tmp_path / "data")
        code = main(
            [
                "sfr-offline",
                "--annotations", str(root / "ann.json"),
                "--images-root", str(root),
                "--out", str(tmp_path / "m"),
            ]
        )
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error[config]:") and "--seed" in err

    def test_repeat_runs_identical(self, tmp_path):
        root = boxed_dataset(tmp_path / "data", n_boxes=6)
        argv_base = [
            "sfr-offline",
            "--annotations", str(root / "ann.json"),
            "--images-root", str(root),
            "--seed", "7",
            "--grids", "2,3",
        ]
        main(argv_base + ["--out", str(tmp_path / "a")])
        main(argv_base + ["--out", str(tmp_path / "b")])
        a, b = tmp_path / "a", tmp_path / "b"
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert files
        for rel in files:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_bad_grid_list(self, tmp_path, capsys):
        root = boxed_dataset(tmp_path / "data")
        code = main(
            [
                "sfr-offline",
                "--annotations", str(root / "ann.json"),
                "--images-root", str(root),
                "--out", str(tmp_path / "m"),
                "--seed", "0",
                "--grids", "two",
            ]
        )
        assert code == 2
        assert capsys.readouterr().err.startswith("error[config]:")


class TestTrainToy:
    def test_synthetic_run(self, tmp_path, capsys):
        log = tmp_path / "log.jsonl"
        ckpt = tmp_path / "weights.npz"
        code = main(
            [
                "train-toy",
                "--seed", "0",
                "--epochs", "2",
                "--samples", "4",
                "--batch-size", "4",
                "--log", str(log),
                "--checkpoint", str(ckpt),
            ]
        )
        assert code == 0
        assert "trained 2 epochs" in capsys.readouterr().out
        assert len(log.read_text().strip().split("\n")) == 2
        load_params(ckpt)  # must be a readable checkpoint

    def test_update_mode_flag(self, tmp_path, capsys):
        code = main(
            [
                "train-toy",
                "--seed", "0",
                "--epochs", "1",
                "--samples", "3",
                "--mode", "update",
                "--lambda", "0.5",
                "--log", str(tmp_path / "log.jsonl"),
            ]
        )
        assert code == 0
        record = json.loads((tmp_path / "log.jsonl").read_text().splitlines()[0])
        assert record["mode"] == "update"
        assert record["lambda_uniform"] == 0.5

    def test_unknown_optimizer(self, capsys):
        code = main(
            ["train-toy", "--seed", "0", "--epochs", "1", "--samples", "3",
             "--optimizer", "newton"]
        )
        assert code == 2
        assert capsys.readouterr().err.startswith("error[config]:")

    def test_missing_seed(self, capsys):
        assert main(["train-toy", "--epochs", "1"]) == 2
        assert "--seed" in capsys.readouterr().err


class TestEvaluate:
    def make_fixture(self, tmp_path):
        dataset = DetectionDataset(
            categories=[Category(1, "heron")],
            samples=[
                Sample(
                    image_id=1,
                    image_path="a.png",
                    width=400,
                    height=400,
                    labels=[LabeledBox(Box(0, 0, 50, 50), category_id=1)],
                )
            ],
        )
        ann = tmp_path / "ann.json"
        write_annotations(dataset, ann)
        dets = tmp_path / "dets.json"
        dets.write_text(
            json.dumps(
                [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 50, 50], "score": 1.0}]
            )
        )
        return ann, dets

    def test_perfect_detections(self, tmp_path, capsys):
        ann, dets = self.make_fixture(tmp_path)
        out = tmp_path / "report.json"
        code = main(
            ["evaluate", "--annotations", str(ann), "--detections", str(dets), "--out", str(out)]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "mAP" in printed and "100.0" in printed
        assert "-" in printed  # small/large buckets are absent for a 50x50 box
        report = json.loads(out.read_text())
        assert report["mAP"] == 100.0
        assert report["APs"] is None

    def test_unknown_category_in_detections(self, tmp_path, capsys):
        ann, dets = self.make_fixture(tmp_path)
        dets.write_text(
            json.dumps([{"image_id": 1, "category_id": 9, "bbox": [0, 0, 5, 5], "score": 0.5}])
        )
        code = main(["evaluate", "--annotations", str(ann), "--detections", str(dets)])
        assert code == 2
        assert capsys.readouterr().err.startswith("error[evaluation]:")


class TestGradcheck:
    def test_passes_at_default_tolerance(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        assert "max relative gradient error" in capsys.readouterr().out

    def test_fails_at_absurd_tolerance(self, capsys):
        assert main(["gradcheck", "--seed", "0", "--tolerance", "1e-12"]) == 1


class TestConfigFile:
    def test_config_supplies_values(self, tmp_path):
        masks = tmp_path / "masks"
        masks.mkdir()
        write_mask(masks / "m.png", [(0, 0, 6, 6)], value=100)
        out = tmp_path / "ann.json"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps({"masks": str(masks), "out": str(out), "threshold": 50})
        )
        assert main(["convert-masks", "--config", str(cfg)]) == 0
        assert len(read_annotations(out).samples[0].labels) == 1

    def test_cli_overrides_config(self, tmp_path):
        masks = tmp_path / "masks"
        masks.mkdir()
        write_mask(masks / "m.png", [(0, 0, 6, 6)], value=100)
        out = tmp_path / "ann.json"
        cfg = tmp_path / "cfg.json"
        # Config says threshold 50 (box present); the flag must win (box absent).
        cfg.write_text(
            json.dumps({"masks": str(masks), "out": str(out), "threshold": 50})
        )
        assert main(["convert-masks", "--config", str(cfg), "--threshold", "128"]) == 0
        assert read_annotations(out).samples[0].labels == []

    def test_defaults_used_without_config(self):
        assert DEFAULTS["threshold"] == 128
        assert DEFAULTS["lr"] == 0.0003
        assert DEFAULTS["crop"] == 200

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"annotations": "x.json", "typo_key": 1}))
        assert main(["summarize", "--config", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error[config]:") and "typo_key" in err

    def test_config_must_be_object(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps([1, 2, 3]))
        assert main(["summarize", "--config", str(cfg)]) == 2
        assert capsys.readouterr().err.startswith("error[config]:")
