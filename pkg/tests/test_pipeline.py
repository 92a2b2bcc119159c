import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from nnoodkit.errors import DatasetError
from nnoodkit.formats import load_generated_image, read_json, read_png, save_label_map, write_png
from nnoodkit.image import NdImage, foreground_mask, zscore_normalize
from nnoodkit.metrics import evaluate_dataset
from nnoodkit.image import AnomalyMap
from nnoodkit.pipeline import (
    run_calibrate,
    run_evaluate,
    run_generate,
    run_inspect,
    run_plan,
)
from nnoodkit.planning import DatasetLayout, ExperimentPlan, plan_patch_size
from nnoodkit.seeding import mix_seed, rng_from_seed
from nnoodkit.tasks import Task, TaskParams, apply_task
from tests.conftest import write_texture_dataset


def tree_digest(root: Path) -> dict:
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.iterdir())
        if p.is_file()
    }


class TestPlanRules:
    def test_cap_rule(self):
        assert plan_patch_size((1024, 1024), 2) == (256, 256)

    def test_round_down_rule(self):
        assert plan_patch_size((70, 120), 2) == (64, 112)

    def test_floor_and_small_axis(self):
        assert plan_patch_size((40, 20), 2) == (32, 20)

    def test_3d_cap(self):
        assert plan_patch_size((200, 200, 200), 3) == (96, 96, 96)


class TestRunPlan:
    def test_plan_contents(self, texture_dataset_dir):
        result = run_plan(texture_dataset_dir)
        plan = result["plan"]
        assert plan["patch_size"] == [64, 64]
        assert plan["normalisation"] == "zscore"
        assert plan["sample_count"] == 20
        assert Path(result["path"]).is_file()

    def test_rerun_byte_identical(self, texture_dataset_dir, tmp_path):
        a = tmp_path / "plan_a.json"
        b = tmp_path / "plan_b.json"
        run_plan(texture_dataset_dir, a)
        run_plan(texture_dataset_dir, b)
        assert a.read_bytes() == b.read_bytes()

    def test_missing_descriptor_rejected(self, tmp_path):
        with pytest.raises(DatasetError):
            run_plan(tmp_path)

    def test_uniform_background_fills_foreground_stats(self, tmp_path):
        ds = tmp_path / "ds"
        (ds / "imagesTr").mkdir(parents=True)
        rng = np.random.default_rng(0)
        for k in range(3):
            img = np.zeros((64, 64))
            img[8:56, 12:52] = 1.0 + 0.1 * rng.random((48, 40))
            codes = np.round(img / img.max() * 65535).astype(np.uint16)
            write_png(ds / "imagesTr" / f"case_{k}.png", codes[None])
        (ds / "dataset.json").write_text(
            json.dumps(
                {
                    "name": "fg",
                    "spatial_rank": 2,
                    "channels": 1,
                    "uniform_background": True,
                    "file_format": "png2d",
                    "safe_augmentations": [],
                }
            )
        )
        result = run_plan(ds)
        fg = result["plan"]["foreground"]
        assert fg is not None
        assert 40 <= fg["avg_extent"][0] <= 56


class TestRunCalibrate:
    def test_same_seed_identical_json(self, texture_dataset_dir, tmp_path):
        plan_path = tmp_path / "plan.json"
        run_plan(texture_dataset_dir, plan_path)
        a = tmp_path / "params_a.json"
        b = tmp_path / "params_b.json"
        run_calibrate(texture_dataset_dir, "nsa", plan_path, 5, a)
        run_calibrate(texture_dataset_dir, "nsa", plan_path, 5, b)
        assert a.read_bytes() == b.read_bytes()

    def test_fpi_has_no_logistic_block(self, texture_dataset_dir, tmp_path):
        plan_path = tmp_path / "plan.json"
        run_plan(texture_dataset_dir, plan_path)
        out = tmp_path / "fpi.json"
        run_calibrate(texture_dataset_dir, "fpi", plan_path, 1, out)
        doc = read_json(out)
        assert doc["logistic"] is None
        assert doc["task"] == "fpi"

    def test_nsa_logistic_satisfies_constraints(self, texture_dataset_dir, tmp_path):
        plan_path = tmp_path / "plan.json"
        run_plan(texture_dataset_dir, plan_path)
        out = tmp_path / "nsa.json"
        run_calibrate(texture_dataset_dir, "nsa", plan_path, 2, out)
        lg = read_json(out)["logistic"]
        k, d0, q40 = lg["k"], lg["d0"], lg["q40"]
        l0 = 1.0 / (1.0 + np.exp(k * d0))
        lq = 1.0 / (1.0 + np.exp(-k * (q40 - d0)))
        assert abs(l0 - 0.1) < 1e-9
        assert abs(lq - 0.99) < 1e-9


@pytest.fixture(scope="module")
def calibrated(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline_ds")
    ds = write_texture_dataset(root, count=20, shape=(64, 64), seed=42)
    plan_path = ds / "plan.json"
    run_plan(ds, plan_path)
    params = {}
    for task in ("fpi", "cutpaste", "pii", "nsa"):
        out = ds / f"params_{task}.json"
        run_calibrate(ds, task, plan_path, seed=9, out_path=out)
        params[task] = out
    return ds, plan_path, params


class TestRunGenerate:
    def test_outputs_and_sidecars(self, calibrated, tmp_path):
        ds, plan_path, params = calibrated
        out = tmp_path / "gen"
        result = run_generate(ds, "fpi", plan_path, params["fpi"], 4, 11, out)
        assert result["failures"] == []
        assert len(result["written"]) == 4
        sidecar = read_json(out / "sample_00000.json")
        assert sidecar["task"] == "fpi"
        assert sidecar["sample_seed"] == mix_seed(11, 0)
        assert len(sidecar["patches"]) == 1

    def test_label_values_in_range(self, calibrated, tmp_path):
        ds, plan_path, params = calibrated
        out = tmp_path / "gen"
        run_generate(ds, "nsa", plan_path, params["nsa"], 3, 1, out)
        for k in range(3):
            codes = read_png(out / f"sample_{k:05d}_label.png")
            values = codes[0].astype(np.float64) / 65535.0
            assert values.min() >= 0.0 and values.max() <= 1.0

    def test_reruns_and_jobs_byte_identical(self, calibrated, tmp_path):
        ds, plan_path, params = calibrated
        out1 = tmp_path / "g1"
        out2 = tmp_path / "g2"
        out4 = tmp_path / "g4"
        run_generate(ds, "nsa", plan_path, params["nsa"], 6, 17, out1, jobs=1)
        run_generate(ds, "nsa", plan_path, params["nsa"], 6, 17, out2, jobs=1)
        run_generate(ds, "nsa", plan_path, params["nsa"], 6, 17, out4, jobs=4)
        d1, d2, d4 = tree_digest(out1), tree_digest(out2), tree_digest(out4)
        assert d1 == d2
        assert d1 == d4

    def test_placement_failures_reported_without_aborting(self, tmp_path):
        """Impossible placement constraints fail per sample; the run still
        completes and reports every failure."""
        ds = tmp_path / "ds"
        (ds / "imagesTr").mkdir(parents=True)
        rng = np.random.default_rng(7)
        for k in range(4):
            # small foreground block: a 40 px patch can never be all-foreground
            img = np.zeros((48, 48))
            img[14:34, 14:34] = 1.0 + 0.1 * rng.random((20, 20))
            codes = np.round(img / img.max() * 65535).astype(np.uint16)
            write_png(ds / "imagesTr" / f"case_{k}.png", codes[None])
        (ds / "dataset.json").write_text(
            json.dumps(
                {
                    "name": "blocks",
                    "spatial_rank": 2,
                    "channels": 1,
                    "uniform_background": True,
                    "file_format": "png2d",
                    "safe_augmentations": [],
                }
            )
        )
        plan_path = ds / "plan.json"
        run_plan(ds, plan_path)
        params = {
            "extent_bounds": [[40, 44], [40, 44]],
            "max_anomalies": 1,
            "min_fg_fraction": 1.0,
            "alpha_range": [0.05, 0.95],
            "dataset_min": -2.0,
            "jitter": None,
            "logistic": {"k": 10.0, "d0": 0.2197, "q40": 0.5},
        }
        params_path = tmp_path / "impossible.json"
        params_path.write_text(json.dumps(params))
        out = tmp_path / "gen"
        result = run_generate(ds, "nsa", plan_path, params_path, 3, 0, out)
        assert result["written"] == []
        assert [f["index"] for f in result["failures"]] == [0, 1, 2]

    def test_sidecar_replay_reproduces_stored_image(self, calibrated, tmp_path):
        """Replaying the sidecar seed through apply_task regenerates the
        stored tensors exactly."""
        ds, plan_path, params = calibrated
        out = tmp_path / "gen"
        run_generate(ds, "pii", plan_path, params["pii"], 3, 23, out)
        layout = DatasetLayout.scan(ds)
        images = [zscore_normalize(img) for img in layout.load_train()]
        task = Task("pii", TaskParams.from_dict(read_json(params["pii"])))
        for k in range(3):
            sidecar = read_json(out / f"sample_{k:05d}.json")
            i, j = sidecar["source_index"], sidecar["donor_index"]
            replay = apply_task(task, images[i], images[j], rng=rng_from_seed(sidecar["task_seed"]))
            stored = load_generated_image(
                out / sidecar["image_file"], sidecar["image_quant"]
            )
            from nnoodkit.formats import dequantize, quantize

            codes, minimum, scale = quantize(replay.image.data, 65535)
            np.testing.assert_array_equal(stored.data, dequantize(codes, minimum, scale))
            assert [list(p.origin) for p in replay.patches] == [
                p["origin"] for p in sidecar["patches"]
            ]


class TestRunEvaluate:
    def test_perfect_predictions(self, tmp_path, rng):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        for k in range(3):
            mask = np.zeros((16, 16), np.float32)
            mask[2 + k : 6 + k, 3 : 3 + 2 * (k + 1)] = 1.0
            save_label_map(pred / f"s{k}.png", mask, "png2d")
            write_png(gt / f"s{k}.png", (mask[None] > 0).astype(np.uint8) * 255)
        result = run_evaluate(pred, gt)
        assert result["metrics"]["auroc"] == 1.0
        assert result["metrics"]["ap"] == 1.0

    def test_constant_predictions_ap_equals_prevalence(self, tmp_path):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        mask = np.zeros((10, 10), np.float32)
        mask[:2] = 1.0
        save_label_map(pred / "s0.png", np.full((10, 10), 0.5, np.float32), "png2d")
        write_png(gt / "s0.png", (mask[None] > 0).astype(np.uint8) * 255)
        result = run_evaluate(pred, gt)
        assert abs(result["metrics"]["ap"] - result["metrics"]["prevalence"]) < 1e-12

    def test_bounding_box_ground_truth(self, tmp_path):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        scores = np.zeros((12, 12), np.float32)
        scores[4:8, 5:9] = 1.0
        save_label_map(pred / "s0.png", scores, "png2d")
        (gt / "s0.json").write_text(json.dumps([{"origin": [4, 5], "extent": [4, 4]}]))
        result = run_evaluate(pred, gt)
        assert result["metrics"]["auroc"] == 1.0

    def test_matches_in_memory_evaluation(self, tmp_path, rng):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        maps = []
        masks = []
        for k in range(2):
            scores = np.round(rng.random((8, 8)), 3).astype(np.float32)
            mask = rng.random((8, 8)) > 0.6
            mask[0, 0] = True
            mask[0, 1] = False
            save_label_map(pred / f"s{k}.png", scores, "png2d")
            write_png(gt / f"s{k}.png", mask[None].astype(np.uint8) * 255)
            from nnoodkit.formats import load_score_map

            maps.append(AnomalyMap(load_score_map(pred / f"s{k}.png")))
            masks.append(mask)
        result = run_evaluate(pred, gt)
        report = evaluate_dataset(maps, masks)
        assert abs(result["metrics"]["auroc"] - report.auroc) < 1e-12
        assert abs(result["metrics"]["ap"] - report.ap) < 1e-12

    def test_missing_ground_truth_rejected(self, tmp_path):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        save_label_map(pred / "s0.png", np.zeros((4, 4), np.float32), "png2d")
        with pytest.raises(DatasetError):
            run_evaluate(pred, gt)


class TestRunInspect:
    def test_exact_panel_count_and_determinism(self, calibrated, tmp_path):
        ds, plan_path, params = calibrated
        out1 = tmp_path / "i1"
        out2 = tmp_path / "i2"
        r1 = run_inspect(ds, "fpi", plan_path, params["fpi"], 3, 5, out1)
        r2 = run_inspect(ds, "fpi", plan_path, params["fpi"], 3, 5, out2)
        assert len(r1["panels"]) == 3
        assert tree_digest(out1) == tree_digest(out2)

    def test_overlay_changes_only_on_label_support(self, calibrated, tmp_path):
        ds, plan_path, params = calibrated
        out = tmp_path / "panels"
        run_inspect(ds, "fpi", plan_path, params["fpi"], 1, 8, out)
        panel = read_png(out / "panel_00000.png")  # (3, H, 3*W + 4)
        width = (panel.shape[2] - 4) // 3
        augmented = panel[:, :, width + 2 : 2 * width + 2]
        overlay = panel[:, :, 2 * width + 4 :]
        changed = np.any(augmented != overlay, axis=0)

        # regenerate the label support for the same seed
        from nnoodkit.pipeline import _choose_pair

        layout = DatasetLayout.scan(ds)
        images = [zscore_normalize(img) for img in layout.load_train()]
        task = Task("fpi", TaskParams.from_dict(read_json(params["fpi"])))
        sample_seed = mix_seed(8, 0)
        i, j = _choose_pair(rng_from_seed(sample_seed), len(images))
        sample = apply_task(
            task, images[i], images[j], rng=rng_from_seed(mix_seed(sample_seed, 1))
        )
        support = sample.label.values > 0
        assert changed[support].any()
        assert not changed[~support].any()
