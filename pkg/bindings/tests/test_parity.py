"""Binding contract tests: CLI parity, byte-identical task application,
value-exact array round-trips and layout rejection."""
import json
import time
from pathlib import Path

import numpy as np
import pytest

import nnoodkit_bind as bind
from nnoodkit.cli import main as cli_main
from nnoodkit.formats import load_image, quantize, read_json, write_png
from nnoodkit.image import NdImage


def build_dataset(root: Path, count=20, size=64, seed=42) -> Path:
    ds = root / "ds"
    (ds / "imagesTr").mkdir(parents=True)
    gen = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for k in range(count):
        img = np.zeros((size, size))
        for _ in range(4):
            cy, cx = gen.uniform(size * 0.15, size * 0.85, 2)
            s = gen.uniform(size * 0.06, size * 0.2)
            img += gen.uniform(0.3, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        img += 0.05 * gen.standard_normal((size, size))
        codes = np.round((img - img.min()) / (img.max() - img.min()) * 65535).astype(np.uint16)
        write_png(ds / "imagesTr" / f"case_{k:03d}.png", codes[None])
    (ds / "dataset.json").write_text(
        json.dumps(
            {
                "name": "bind-toy",
                "spatial_rank": 2,
                "channels": 1,
                "uniform_background": False,
                "file_format": "png2d",
                "safe_augmentations": [],
            }
        )
    )
    return ds


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("bind_ws")
    ds = build_dataset(root)
    plan_path = ds / "plan.json"
    assert cli_main(["plan", "--dataset", str(ds), "--out", str(plan_path)]) == 0
    params_path = ds / "params_nsa.json"
    rc = cli_main(
        [
            "calibrate",
            "--dataset",
            str(ds),
            "--task",
            "nsa",
            "--plan",
            str(plan_path),
            "--seed",
            "9",
            "--out",
            str(params_path),
        ]
    )
    assert rc == 0
    gen_dir = root / "generated"
    rc = cli_main(
        [
            "generate",
            "--dataset",
            str(ds),
            "--task",
            "nsa",
            "--plan",
            str(plan_path),
            "--params",
            str(params_path),
            "--count",
            "20",
            "--seed",
            "77",
            "--out",
            str(gen_dir),
        ]
    )
    assert rc == 0
    return ds, plan_path, params_path, gen_dir


class TestCalibrateParity:
    def test_parameters_match_cli_output(self, workspace):
        ds, plan_path, params_path, _ = workspace
        arrays = [load_image(p).data for p in sorted((ds / "imagesTr").iterdir())]
        plan_dict = read_json(plan_path)
        bound = bind.bind_calibrate("nsa", arrays, plan_dict, seed=9)
        got = bound.summary()
        want = read_json(params_path)
        assert got["extent_bounds"] == want["extent_bounds"]
        assert got["max_anomalies"] == want["max_anomalies"]
        assert got["min_fg_fraction"] == want["min_fg_fraction"]
        assert got["dataset_min"] == want["dataset_min"]
        assert got["logistic"] == want["logistic"]

    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError):
            bind.bind_calibrate("mystery", [np.zeros((1, 8, 8), np.float32)], {}, 0)

    def test_empty_dataset_rejected(self, workspace):
        _, plan_path, _, _ = workspace
        with pytest.raises(ValueError):
            bind.bind_calibrate("fpi", [], read_json(plan_path), 0)


class TestApplyParity:
    def test_byte_identical_to_cli_generation(self, workspace, tmp_path):
        """[SECONDARY] acceptance: 20 seeded cases, re-encoded binding
        output matches the CLI files byte for byte."""
        started = time.time()
        ds, plan_path, params_path, gen_dir = workspace
        arrays = [load_image(p).data for p in sorted((ds / "imagesTr").iterdir())]
        images = [bind.normalize(a) for a in arrays]
        bound = bind.bind_calibrate("nsa", arrays, read_json(plan_path), seed=9)
        for k in range(20):
            sidecar = read_json(gen_dir / f"sample_{k:05d}.json")
            i, j = sidecar["source_index"], sidecar["donor_index"]
            image, label, centres = bind.bind_apply(
                bound, images[i], images[j], None, seed=sidecar["task_seed"]
            )
            assert [list(c) for c in centres] == sidecar["anomaly_centres"]
            codes, _, _ = quantize(image, 65535)
            write_png(tmp_path / "img.png", codes.astype(np.uint16))
            assert (
                (tmp_path / "img.png").read_bytes()
                == (gen_dir / sidecar["image_file"]).read_bytes()
            ), f"case {k}: image bytes differ"
            label_codes = np.round(label.astype(np.float64) * 65535.0)
            write_png(
                tmp_path / "label.png",
                np.clip(label_codes, 0, 65535).astype(np.uint16)[None],
            )
            assert (
                (tmp_path / "label.png").read_bytes()
                == (gen_dir / sidecar["label_file"]).read_bytes()
            ), f"case {k}: label bytes differ"
        print(f"PASS binding parity: {time.time() - started:.2f}s (20 seeded cases)")

    def test_repeat_call_bit_identical(self, workspace):
        ds, plan_path, _, _ = workspace
        arrays = [load_image(p).data for p in sorted((ds / "imagesTr").iterdir())[:2]]
        images = [bind.normalize(a) for a in arrays]
        bound = bind.bind_calibrate("nsa", arrays, read_json(plan_path), seed=9)
        a_img, a_lab, a_c = bind.bind_apply(bound, images[0], images[1], None, seed=5)
        b_img, b_lab, b_c = bind.bind_apply(bound, images[0], images[1], None, seed=5)
        assert np.array_equal(a_img, b_img)
        assert np.array_equal(a_lab, b_lab)
        assert a_c == b_c

    def test_fpi_identical_donor_leaves_image(self, workspace):
        ds, plan_path, _, _ = workspace
        arrays = [load_image(p).data for p in sorted((ds / "imagesTr").iterdir())[:1]]
        img = bind.normalize(arrays[0])
        bound = bind.bind_calibrate("fpi", arrays, read_json(plan_path), seed=1)
        out, label, _ = bind.bind_apply(bound, img, img, None, seed=3)
        np.testing.assert_allclose(out, img, atol=1e-6)
        assert label.min() >= 0.0 and label.max() <= 1.0

    def test_shape_mismatch_diagnostics(self, workspace):
        ds, plan_path, _, _ = workspace
        arrays = [load_image(p).data for p in sorted((ds / "imagesTr").iterdir())[:1]]
        bound = bind.bind_calibrate("fpi", arrays, read_json(plan_path), seed=1)
        with pytest.raises(ValueError, match="shape"):
            bind.bind_apply(
                bound,
                np.zeros((1, 64, 64), np.float32),
                np.zeros((1, 32, 32), np.float32),
                None,
                seed=0,
            )


class TestArrayConversion:
    def test_round_trip_value_exact_and_zero_copy(self):
        arr = np.random.default_rng(0).random((2, 12, 12)).astype(np.float32)
        tensor = bind.to_tensor(arr)
        back = bind.from_tensor(tensor)
        assert back is tensor.data
        assert np.shares_memory(back, arr)
        np.testing.assert_array_equal(back, arr)

    def test_float64_copies_but_preserves_float32_values(self):
        arr = np.random.default_rng(1).random((1, 8, 8)).astype(np.float32)
        back = bind.from_tensor(bind.to_tensor(arr.astype(np.float64)))
        np.testing.assert_array_equal(back, arr)

    def test_layout_rejected_with_diagnostics(self):
        with pytest.raises(ValueError, match="channel-first"):
            bind.to_tensor(np.zeros(5, np.float32))
        with pytest.raises(ValueError, match="dtype"):
            bind.to_tensor(np.array([["a", "b"]], dtype=object))

    def test_mask_dtype_enforced(self, workspace):
        ds, plan_path, _, _ = workspace
        arrays = [load_image(p).data for p in sorted((ds / "imagesTr").iterdir())[:1]]
        img = bind.normalize(arrays[0])
        bound = bind.bind_calibrate("nsa", arrays, read_json(plan_path), seed=2)
        with pytest.raises(ValueError, match="boolean"):
            bind.bind_apply(
                bound, img, img, (np.ones((64, 64), np.uint8), None), seed=0
            )


class TestMetadata:
    def test_versions_exposed(self):
        assert bind.__version__
        assert bind.core_version

    def test_summary_introspection(self, workspace):
        ds, plan_path, _, _ = workspace
        arrays = [load_image(p).data for p in sorted((ds / "imagesTr").iterdir())[:2]]
        bound = bind.bind_calibrate("fpi", arrays, read_json(plan_path), seed=3)
        summary = bound.summary()
        assert summary["task"] == "fpi"
        assert summary["logistic"] is None
        assert len(summary["extent_bounds"]) == 2
