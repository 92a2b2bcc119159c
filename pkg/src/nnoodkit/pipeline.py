"""Implementations of the plan / calibrate / generate / evaluate / inspect
commands, shared by the HTTP service and the CLI."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DatasetError, PlacementError
from .formats import (
    IMAGE_EXTENSIONS,
    NIFTI_EXTENSIONS,
    atomic_write_json,
    load_score_map,
    rasterize_boxes,
    read_json,
    read_nifti,
    read_png,
    save_generated_image,
    save_label_map,
    write_png,
)
from .image import AnomalyMap, NdImage, foreground_mask, zscore_normalize
from .metrics import evaluate_dataset
from .planning import DatasetLayout, ExperimentPlan, compute_plan
from .seeding import mix_seed, rng_from_seed
from .tasks import Task, TaskParams, apply_task, calibrate, canonical_identity

JOBS_ENV = "NNOODKIT_JOBS"


def external_task_name(identity: str) -> str:
    return identity.replace("_", "-")


def default_jobs(requested: Optional[int]) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(JOBS_ENV)
    if env:
        return max(1, int(env))
    return 1


def _load_plan(plan_path) -> ExperimentPlan:
    return ExperimentPlan.from_dict(read_json(plan_path))


def _prepared_dataset(layout: DatasetLayout):
    """Normalised training tensors plus masks when the background is uniform."""
    raw = layout.load_train()
    images = [zscore_normalize(img) for img in raw]
    masks = None
    if layout.descriptor.uniform_background:
        masks = [foreground_mask(img) for img in images]
    return images, masks


def run_plan(dataset_dir, out_path=None) -> dict:
    """Scan the dataset and write the experiment plan."""
    layout = DatasetLayout.scan(dataset_dir)
    images = layout.load_train()
    plan = compute_plan(images, layout.descriptor)
    path = Path(out_path) if out_path else layout.root / "plan.json"
    atomic_write_json(path, plan.to_dict())
    return {"plan": plan.to_dict(), "path": str(path)}


def run_calibrate(dataset_dir, task: str, plan_path, seed: int, out_path=None) -> dict:
    """Calibrate task parameters on the normalised dataset and persist them."""
    layout = DatasetLayout.scan(dataset_dir)
    identity = canonical_identity(task)
    plan = _load_plan(plan_path)
    images, masks = _prepared_dataset(layout)
    rng = rng_from_seed(int(seed))
    params = calibrate(identity, images, masks, plan, rng)
    document = {"task": external_task_name(identity), "calibration_seed": int(seed)}
    document.update(params.to_dict())
    path = (
        Path(out_path)
        if out_path
        else layout.root / f"task_params_{external_task_name(identity)}.json"
    )
    atomic_write_json(path, document)
    return {"params": document, "path": str(path)}


def _choose_pair(rng, count: int) -> tuple[int, int]:
    i = int(rng.integers(count))
    if count == 1:
        return i, i
    j = int(rng.integers(count - 1))
    if j >= i:
        j += 1
    return i, j


def _generate_one(
    task: Task,
    images,
    masks,
    file_format: str,
    base_seed: int,
    index: int,
    out_dir: Path,
):
    # pair selection and task application run on decoupled streams so the
    # application is reproducible from task_seed alone (bindings rely on it)
    sample_seed = mix_seed(int(base_seed), index)
    pair_rng = rng_from_seed(sample_seed)
    i, j = _choose_pair(pair_rng, len(images))
    task_seed = mix_seed(sample_seed, 1)
    m_i = masks[i] if masks is not None else None
    m_j = masks[j] if masks is not None else None
    sample = apply_task(task, images[i], images[j], m_i, m_j, rng_from_seed(task_seed))

    ext = ".nii" if file_format == "nifti" else ".png"
    stem = f"sample_{index:05d}"
    image_file = f"{stem}{ext}"
    label_file = f"{stem}_label{ext}"
    image_quant = save_generated_image(out_dir / image_file, sample.image, file_format)
    label_quant = save_label_map(out_dir / label_file, sample.label.values, file_format)
    sidecar = {
        "task": external_task_name(task.identity),
        "base_seed": int(base_seed),
        "index": index,
        "sample_seed": sample_seed,
        "task_seed": task_seed,
        "source_index": i,
        "donor_index": j,
        "alphas": list(sample.alphas),
        "anomaly_centres": [list(c) for c in sample.anomaly_centres],
        "patches": [
            {"origin": list(p.origin), "extent": list(p.extent)} for p in sample.patches
        ],
        "image_file": image_file,
        "label_file": label_file,
        "image_quant": image_quant,
        "label_quant": label_quant,
    }
    atomic_write_json(out_dir / f"{stem}.json", sidecar)
    return stem


def run_generate(
    dataset_dir,
    task: str,
    plan_path,
    params_path,
    count: int,
    seed: int,
    out_dir,
    jobs: Optional[int] = None,
) -> dict:
    """Write an augmented dataset: images, label maps and JSON sidecars.

    Every sample derives its own seed from (seed, index), so outputs are
    byte-identical regardless of worker count or scheduling order.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    layout = DatasetLayout.scan(dataset_dir)
    identity = canonical_identity(task)
    params = TaskParams.from_dict(read_json(params_path))
    task_obj = Task(identity, params)
    images, masks = _prepared_dataset(layout)
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    workers = default_jobs(jobs)
    file_format = layout.descriptor.file_format

    written: list[str] = []
    failures: list[dict] = []

    def job(index: int):
        try:
            return index, _generate_one(
                task_obj, images, masks, file_format, seed, index, out_path
            ), None
        except PlacementError as exc:
            return index, None, str(exc)

    if workers == 1:
        results = [job(k) for k in range(count)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(count)))
    for index, stem, error in sorted(results):
        if error is None:
            written.append(stem)
        else:
            failures.append({"index": index, "error": error})
    return {"out_dir": str(out_path), "written": written, "failures": failures}


def _load_binary_mask(path: Path) -> np.ndarray:
    if path.suffix in NIFTI_EXTENSIONS:
        return read_nifti(path)[0] > 0.5
    return read_png(path)[0] > 0


def _match_ground_truth(pred: Path, gt_dir: Path) -> Path:
    candidates = [gt_dir / pred.name]
    stem = pred.stem
    candidates += [gt_dir / f"{stem}{ext}" for ext in IMAGE_EXTENSIONS]
    candidates.append(gt_dir / f"{stem}.json")
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    raise DatasetError(f"no ground truth found for {pred.name}")


def run_evaluate(pred_dir, gt_dir, out_path=None) -> dict:
    """Pool pixel scores against ground-truth masks or bounding boxes."""
    pred_root = Path(pred_dir)
    gt_root = Path(gt_dir)
    preds = sorted(p for p in pred_root.iterdir() if p.suffix in IMAGE_EXTENSIONS)
    if not preds:
        raise DatasetError(f"{pred_root}: no prediction maps found")
    pred_maps = []
    gt_masks = []
    for pred in preds:
        scores = load_score_map(pred)
        gt_path = _match_ground_truth(pred, gt_root)
        if gt_path.suffix == ".json":
            mask = rasterize_boxes(read_json(gt_path), scores.shape)
        else:
            mask = _load_binary_mask(gt_path)
        pred_maps.append(AnomalyMap(np.clip(scores, 0.0, 1.0)))
        gt_masks.append(mask)
    report = evaluate_dataset(pred_maps, gt_masks)
    document = dict(report.to_dict(), n_samples=len(preds))
    path = Path(out_path) if out_path else pred_root / "metrics.json"
    atomic_write_json(path, document)
    return {"metrics": document, "path": str(path)}


def _display_slice(data: np.ndarray) -> np.ndarray:
    """Reduce a channel-first tensor to a 2D display plane (central slice
    for volumes, channel mean beyond 3 channels)."""
    if data.ndim == 4:  # (C, Z, Y, X): show the central axial slice
        data = data[:, data.shape[1] // 2]
    if data.shape[0] == 3:
        return np.moveaxis(data, 0, -1)
    return data.mean(axis=0)


def _to_u8(plane: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.zeros(plane.shape, dtype=np.uint8)
    scaled = (plane.astype(np.float64) - lo) / (hi - lo)
    return np.round(np.clip(scaled, 0.0, 1.0) * 255.0).astype(np.uint8)


def _as_rgb(plane_u8: np.ndarray) -> np.ndarray:
    if plane_u8.ndim == 2:
        return np.stack([plane_u8] * 3, axis=-1)
    return plane_u8


def render_panel(original: NdImage, sample_image: NdImage, label: AnomalyMap) -> np.ndarray:
    """Side-by-side uint8 RGB panel: original, augmented, label overlay."""
    orig_plane = _display_slice(original.data)
    aug_plane = _display_slice(sample_image.data)
    lo = float(min(orig_plane.min(), aug_plane.min()))
    hi = float(max(orig_plane.max(), aug_plane.max()))
    orig_u8 = _as_rgb(_to_u8(orig_plane, lo, hi))
    aug_u8 = _as_rgb(_to_u8(aug_plane, lo, hi))
    label_plane = label.values
    if label_plane.ndim == 3:
        label_plane = label_plane[label_plane.shape[0] // 2]
    heat = label_plane.astype(np.float64)
    overlay = aug_u8.astype(np.float64).copy()
    overlay[..., 0] = overlay[..., 0] + heat * (255.0 - overlay[..., 0])
    overlay[..., 1] = overlay[..., 1] * (1.0 - heat)
    overlay[..., 2] = overlay[..., 2] * (1.0 - heat)
    overlay_u8 = np.round(overlay).astype(np.uint8)
    gap = np.full((orig_u8.shape[0], 2, 3), 255, dtype=np.uint8)
    return np.concatenate([orig_u8, gap, aug_u8, gap, overlay_u8], axis=1)


def run_inspect(dataset_dir, task, plan_path, params_path, n, seed, out_dir) -> dict:
    """Emit per-sample inspection panels as 8-bit PNG."""
    if n < 1:
        raise ValueError("n must be >= 1")
    layout = DatasetLayout.scan(dataset_dir)
    identity = canonical_identity(task)
    params = TaskParams.from_dict(read_json(params_path))
    task_obj = Task(identity, params)
    images, masks = _prepared_dataset(layout)
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    panels = []
    for k in range(int(n)):
        sample_seed = mix_seed(int(seed), k)
        pair_rng = rng_from_seed(sample_seed)
        i, j = _choose_pair(pair_rng, len(images))
        m_i = masks[i] if masks is not None else None
        m_j = masks[j] if masks is not None else None
        sample = apply_task(
            task_obj, images[i], images[j], m_i, m_j, rng_from_seed(mix_seed(sample_seed, 1))
        )
        panel = render_panel(images[i], sample.image, sample.label)
        name = f"panel_{k:05d}.png"
        write_png(out_path / name, np.moveaxis(panel, -1, 0))
        panels.append(name)
    return {"out_dir": str(out_path), "panels": panels}
