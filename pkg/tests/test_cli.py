"""Tests for the batch command line interface."""

import json
import os

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from crackkit.cli import main
from crackkit.evalmetrics import metrics_from_tally, tally_with_tolerance
from crackkit.patchset import PatchManifest
from crackkit.raster import load_image, load_mask
from crackkit.trainmath import (TverskyConfig, bce_loss, dice_bce_loss, dice_loss,
                                inversion_loss, tversky_loss)
from synthcorpus import make_crack_image


def save_png(arr: np.ndarray, path) -> None:
    os.makedirs(os.path.dirname(str(path)), exist_ok=True)
    Image.fromarray(arr).save(str(path))


def save_mask_png(pixels: np.ndarray, path) -> None:
    save_png(pixels.astype(np.uint8) * 255, path)


def make_line_corpus(root, n_train=8, n_test=2, size=400, lines_per_image=6):
    """Images whose masks carry full-width crack rows, one per patch row.

    With 8 px patches each line turns a whole 50-patch row into crack
    patches, so counts are exact by construction.
    """
    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        rng = np.random.default_rng(100 + i)
        img = rng.integers(120, 180, (size, size)).astype(np.uint8)
        mask = np.zeros((size, size), dtype=bool)
        for k in range(lines_per_image):
            y = (2 * k + 1) * size // (2 * lines_per_image)
            mask[y, :] = True
        save_png(img, root / "images" / split / f"img{i:02d}.png")
        save_mask_png(mask, root / "masks" / split / f"img{i:02d}.png")
    return root


def make_counted_corpus(root):
    """Ten 160x80 images whose 8 px grids hold exactly 129 crack patches."""
    per_image = [13] * 9 + [12]
    for i, crack_patches in enumerate(per_image):
        split = "train" if i < 8 else "test"
        img = np.full((80, 160), 140, dtype=np.uint8)
        mask = np.zeros((80, 160), dtype=bool)
        origins = [(x * 8, y * 8) for y in range(10) for x in range(20)]
        for x0, y0 in origins[:crack_patches]:
            mask[y0 + 4, x0 + 4] = True
        save_png(img, root / "images" / split / f"img{i:02d}.png")
        save_mask_png(mask, root / "masks" / split / f"img{i:02d}.png")
    return root


@pytest.fixture(scope="module")
def line_corpus(tmp_path_factory):
    return make_line_corpus(tmp_path_factory.mktemp("lines"))


@pytest.fixture(scope="module")
def counted_corpus(tmp_path_factory):
    return make_counted_corpus(tmp_path_factory.mktemp("counted"))


def run(args):
    return CliRunner().invoke(main, args)


def build_args(corpus, out, extra=()):
    return ["dataset", "build", "--images", str(corpus / "images"),
            "--masks", str(corpus / "masks"), "--patch-size", "8",
            "--out", str(out), "--no-materialize", *extra]


class TestDatasetBuild:
    def test_full_split_reports_pool_ratio(self, counted_corpus, tmp_path):
        out = tmp_path / "full.jsonl"
        result = run(build_args(counted_corpus, out, ["--ratio", "full"]))
        assert result.exit_code == 0, result.output + result.stderr
        assert "6.45%" in result.output and "93.55%" in result.output
        manifest = PatchManifest.from_jsonl(out.read_text())
        assert len(manifest.records) == 2000

    def test_ratio_dataset_has_expected_size(self, line_corpus, tmp_path):
        out = tmp_path / "d.jsonl"
        result = run(build_args(line_corpus, out,
                                ["--ratio", "70/30", "--crack-count", "1400", "--seed", "5"]))
        assert result.exit_code == 0, result.output + result.stderr
        manifest = PatchManifest.from_jsonl(out.read_text())
        assert len(manifest.records) == 2000
        assert manifest.count("crack") == 1400

    def test_same_seed_reproduces_manifest_bytes(self, line_corpus, tmp_path):
        args = ["--ratio", "70/30", "--crack-count", "200", "--seed", "9"]
        out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run(build_args(line_corpus, out1, args)).exit_code == 0
        assert run(build_args(line_corpus, out2, args)).exit_code == 0
        assert out1.read_bytes() == out2.read_bytes()

        out3 = tmp_path / "c.jsonl"
        args[-1] = "10"
        assert run(build_args(line_corpus, out3, args)).exit_code == 0
        assert out1.read_bytes() != out3.read_bytes()

    def test_unpaired_files_fail_listed(self, tmp_path):
        corpus = make_counted_corpus(tmp_path / "c")
        save_png(np.zeros((80, 160), dtype=np.uint8),
                 corpus / "images" / "train" / "orphan.png")
        result = run(build_args(corpus, tmp_path / "x.jsonl", ["--ratio", "full"]))
        assert result.exit_code == 1
        error = json.loads(result.stderr)
        assert error["error"] == "unpaired_files"
        assert "orphan.png" in error["message"]

    def test_insufficient_pool_fails(self, counted_corpus, tmp_path):
        result = run(build_args(counted_corpus, tmp_path / "x.jsonl",
                                ["--ratio", "70/30", "--crack-count", "5000"]))
        assert result.exit_code == 1
        assert json.loads(result.stderr)["error"] == "compose_failed"

    def test_materializes_patch_files(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, (32, 32)).astype(np.uint8)
        mask = np.zeros((32, 32), dtype=bool)
        mask[5, 5] = True
        save_png(img, tmp_path / "src" / "images" / "one.png")
        save_mask_png(mask, tmp_path / "src" / "masks" / "one.png")
        out = tmp_path / "ds" / "manifest.jsonl"
        result = run(["dataset", "build", "--images", str(tmp_path / "src" / "images"),
                      "--masks", str(tmp_path / "src" / "masks"), "--patch-size", "8",
                      "--ratio", "full", "--out", str(out)])
        assert result.exit_code == 0, result.output + result.stderr
        manifest = PatchManifest.from_jsonl(out.read_text())
        assert len(manifest.records) == 16
        crack_patch = tmp_path / "ds" / "patches" / "train" / "crack" / "one_x0_y0.png"
        assert crack_patch.exists()
        assert np.array_equal(load_image(crack_patch).pixels, img[0:8, 0:8] / 255.0)
        mask_patch = tmp_path / "ds" / "patch_masks" / "train" / "crack" / "one_x0_y0.png"
        assert np.array_equal(load_mask(mask_patch).pixels, mask[0:8, 0:8])


class TestDatasetExtend:
    def extend_args(self, corpus, base, out, ratio, seed="0"):
        return ["dataset", "extend", "--base", str(base),
                "--images", str(corpus / "images"), "--masks", str(corpus / "masks"),
                "--ratio", ratio, "--seed", seed, "--out", str(out), "--no-materialize"]

    def test_extension_counts_and_superset(self, line_corpus, tmp_path):
        base = tmp_path / "base.jsonl"
        assert run(build_args(line_corpus, base,
                              ["--ratio", "70/30", "--crack-count", "1400"])).exit_code == 0
        out = tmp_path / "ext.jsonl"
        result = run(self.extend_args(line_corpus, base, out, "30/70"))
        assert result.exit_code == 0, result.output + result.stderr
        extended = PatchManifest.from_jsonl(out.read_text())
        assert extended.count("crack") == 1400
        assert extended.count("background") == 3267
        base_records = set(PatchManifest.from_jsonl(base.read_text()).records)
        assert base_records <= set(extended.records)

    def test_same_ratio_is_noop(self, line_corpus, tmp_path):
        base = tmp_path / "base.jsonl"
        assert run(build_args(line_corpus, base,
                              ["--ratio", "70/30", "--crack-count", "1400"])).exit_code == 0
        out = tmp_path / "same.jsonl"
        assert run(self.extend_args(line_corpus, base, out, "70/30")).exit_code == 0
        assert (PatchManifest.from_jsonl(out.read_text()).records
                == PatchManifest.from_jsonl(base.read_text()).records)

    def test_chained_extension_reaches_final_count(self, line_corpus, tmp_path):
        base = tmp_path / "b.jsonl"
        assert run(build_args(line_corpus, base,
                              ["--ratio", "70/30", "--crack-count", "1400"])).exit_code == 0
        mid, final = tmp_path / "m.jsonl", tmp_path / "f.jsonl"
        assert run(self.extend_args(line_corpus, base, mid, "30/70")).exit_code == 0
        result = run(self.extend_args(line_corpus, mid, final, "10/90"))
        assert result.exit_code == 0, result.output + result.stderr
        manifest = PatchManifest.from_jsonl(final.read_text())
        assert manifest.count("background") == 12600
        assert manifest.count("crack") == 1400


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("annot")
    img, gt, spine, half, (a, b) = make_crack_image(0, size=128)
    path = root / "crack.png"
    save_png(np.round(img * 255.0).astype(np.uint8), path)
    return path, gt, f"{a[0]},{a[1]},{b[0]},{b[1]}"


class TestAnnotateCommand:
    def annotate_args(self, image_path, out_path, endpoints):
        return ["annotate", "--image", str(image_path), "--out", str(out_path),
                "--endpoints", endpoints, "--edge-sigma", "1.2"]

    def test_fixture_curve_mask_quality(self, scene, tmp_path):
        image_path, gt, endpoints = scene
        out = tmp_path / "mask.png"
        result = run(self.annotate_args(image_path, out, endpoints))
        assert result.exit_code == 0, result.output + result.stderr
        mask = load_mask(out)
        _, _, f1 = metrics_from_tally(tally_with_tolerance(mask.pixels, gt, 0.0))
        assert f1 >= 0.90

        summary = json.loads(result.output)
        widths = json.loads((tmp_path / "mask.widths.json").read_text())
        assert len(widths) == summary["vertices"]

    def test_rerun_bit_identical(self, scene, tmp_path):
        image_path, _, endpoints = scene
        first, second = tmp_path / "a.png", tmp_path / "b.png"
        assert run(self.annotate_args(image_path, first, endpoints)).exit_code == 0
        assert run(self.annotate_args(image_path, second, endpoints)).exit_code == 0
        assert first.read_bytes() == second.read_bytes()
        assert ((tmp_path / "a.widths.json").read_bytes()
                == (tmp_path / "b.widths.json").read_bytes())

    def test_out_of_bounds_endpoint_exit_2(self, scene, tmp_path):
        image_path, _, _ = scene
        result = run(self.annotate_args(image_path, tmp_path / "m.png", "5,5,500,500"))
        assert result.exit_code == 2
        error = json.loads(result.stderr)
        assert error["error"] == "invalid_input" and "500" in error["message"]

    def test_malformed_endpoints_exit_2(self, scene, tmp_path):
        image_path, _, _ = scene
        result = run(self.annotate_args(image_path, tmp_path / "m.png", "1,2,3"))
        assert result.exit_code == 2
        assert json.loads(result.stderr)["error"] == "bad_endpoints"

    def test_bad_metric_params_exit_2(self, scene, tmp_path):
        image_path, _, endpoints = scene
        result = run(self.annotate_args(image_path, tmp_path / "m.png", endpoints)
                     + ["--params", '{"zeta": 5.0}'])
        assert result.exit_code == 2
        assert json.loads(result.stderr)["error"] == "bad_params"


class TestEvalCommand:
    def eval_args(self, pred, gt, out, tolerance="0"):
        return ["eval", "--pred", str(pred), "--gt", str(gt),
                "--tolerance", tolerance, "--out", str(out)]

    def write_pair(self, root, name, pred_pixels, gt_pixels):
        save_mask_png(pred_pixels, root / "pred" / name)
        save_mask_png(gt_pixels, root / "gt" / name)

    def test_perfect_prediction_scores_one(self, tmp_path):
        rng = np.random.default_rng(0)
        mask = rng.random((32, 32)) > 0.8
        self.write_pair(tmp_path, "a.png", mask, mask)
        out = tmp_path / "report.json"
        result = run(self.eval_args(tmp_path / "pred", tmp_path / "gt", out))
        assert result.exit_code == 0, result.output + result.stderr
        report = json.loads(out.read_text())
        assert (report["aggregate"]["pr"], report["aggregate"]["re"],
                report["aggregate"]["f1"]) == (1.0, 1.0, 1.0)
        assert "tolerance=0px threshold=0.5" in result.output

    def test_all_background_prediction_convention(self, tmp_path):
        gt = np.zeros((32, 32), dtype=bool)
        gt[10:12, 4:28] = True
        self.write_pair(tmp_path, "a.png", np.zeros((32, 32), dtype=bool), gt)
        out = tmp_path / "report.json"
        assert run(self.eval_args(tmp_path / "pred", tmp_path / "gt", out)).exit_code == 0
        aggregate = json.loads(out.read_text())["aggregate"]
        assert (aggregate["pr"], aggregate["re"], aggregate["f1"]) == (1.0, 0.0, 0.0)

    def test_tolerance_sweep_monotone(self, tmp_path):
        rng = np.random.default_rng(3)
        self.write_pair(tmp_path, "a.png", rng.random((48, 48)) > 0.9,
                        rng.random((48, 48)) > 0.9)
        scores = []
        for t in ("0", "2", "5"):
            out = tmp_path / f"r{t}.json"
            assert run(self.eval_args(tmp_path / "pred", tmp_path / "gt", out,
                                      tolerance=t)).exit_code == 0
            scores.append(json.loads(out.read_text())["aggregate"]["f1"])
        assert scores[0] <= scores[1] <= scores[2]

    def test_unpaired_files_exit_1(self, tmp_path):
        mask = np.zeros((8, 8), dtype=bool)
        self.write_pair(tmp_path, "a.png", mask, mask)
        save_mask_png(mask, tmp_path / "pred" / "extra.png")
        result = run(self.eval_args(tmp_path / "pred", tmp_path / "gt",
                                    tmp_path / "r.json"))
        assert result.exit_code == 1
        assert "extra.png" in json.loads(result.stderr)["message"]

    def test_rerun_report_identical(self, tmp_path):
        rng = np.random.default_rng(5)
        self.write_pair(tmp_path, "a.png", rng.random((16, 16)) > 0.7,
                        rng.random((16, 16)) > 0.7)
        out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
        assert run(self.eval_args(tmp_path / "pred", tmp_path / "gt", out1)).exit_code == 0
        assert run(self.eval_args(tmp_path / "pred", tmp_path / "gt", out2)).exit_code == 0
        assert out1.read_bytes() == out2.read_bytes()


class TestLossEval:
    def write_artifacts(self, root, gt_pixels, pred_values):
        save_mask_png(gt_pixels, root / "gt.png")
        save_png(np.round(pred_values * 255.0).astype(np.uint8), root / "pred.png")
        return root / "gt.png", root / "pred.png"

    def test_reports_every_configured_loss(self, tmp_path):
        rng = np.random.default_rng(1)
        gt_pixels = rng.random((24, 24)) > 0.7
        pred_values = np.round(rng.random((24, 24)) * 255.0) / 255.0
        gt_path, pred_path = self.write_artifacts(tmp_path, gt_pixels, pred_values)
        result = run(["loss", "eval", "--gt", str(gt_path), "--pred", str(pred_path),
                      "--inversion", "--tversky", "0.3,0.7"])
        assert result.exit_code == 0, result.output + result.stderr
        values = json.loads(result.output)

        gt, pred = load_mask(gt_path), pred_values
        assert values["bce"] == bce_loss(gt, pred)
        assert values["dice"] == dice_loss(gt, pred)
        assert values["dice_bce"] == dice_bce_loss(gt, pred)
        assert values["inversion"] == inversion_loss(gt, pred)
        assert values["tversky"] == tversky_loss(gt, pred, TverskyConfig(0.3, 0.7))

    def test_background_mask_reports_inverted_branch(self, tmp_path):
        gt_pixels = np.zeros((16, 16), dtype=bool)
        pred_values = np.zeros((16, 16))
        pred_values[3:5, 3:9] = 200.0 / 255.0
        gt_path, pred_path = self.write_artifacts(tmp_path, gt_pixels, pred_values)
        result = run(["loss", "eval", "--gt", str(gt_path), "--pred", str(pred_path),
                      "--inversion"])
        values = json.loads(result.output)
        assert values["inversion"] == dice_bce_loss(1.0 - gt_pixels.astype(float),
                                                    1.0 - pred_values)
        assert values["inversion"] != values["dice_bce"]

    def test_bad_tversky_spec_exit_2(self, tmp_path):
        gt_path, pred_path = self.write_artifacts(tmp_path, np.zeros((8, 8), dtype=bool),
                                                  np.zeros((8, 8)))
        result = run(["loss", "eval", "--gt", str(gt_path), "--pred", str(pred_path),
                      "--tversky", "nope"])
        assert result.exit_code == 2
        assert json.loads(result.stderr)["error"] == "bad_tversky"
