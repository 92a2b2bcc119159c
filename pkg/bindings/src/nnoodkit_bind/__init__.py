"""Thin in-process bindings for ML training pipelines.

Two calls wrap the core toolkit as array-in/array-out functions: one
calibrates a task from a stack of dataset arrays, the other applies it to a
pair of samples.  Arrays travel in channel-first layout matching the core
tensor type; mismatched layouts are rejected with diagnostics rather than
silently transposed.  All randomness comes from explicit seeds.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

import nnoodkit
from nnoodkit import NdImage, Task, apply_task, calibrate, zscore_normalize
from nnoodkit.image import ForegroundMask, foreground_mask
from nnoodkit.planning import ExperimentPlan
from nnoodkit.seeding import rng_from_seed
from nnoodkit.tasks import canonical_identity

__version__ = "0.1.0"
core_version = nnoodkit.__version__

__all__ = [
    "BoundTask",
    "bind_calibrate",
    "bind_apply",
    "normalize",
    "to_tensor",
    "from_tensor",
    "__version__",
    "core_version",
]


def to_tensor(array, *, name: str = "array") -> NdImage:
    """Wrap a channel-first float array as a core tensor, zero-copy for
    C-contiguous float32 input."""
    arr = np.asarray(array)
    if arr.ndim < 2 or arr.ndim > 4:
        raise ValueError(
            f"{name}: expected channel-first (channels, *spatial) with spatial "
            f"rank 1-3, got shape {arr.shape} dtype {arr.dtype}"
        )
    if not np.issubdtype(arr.dtype, np.floating) and not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name}: dtype {arr.dtype} is not numeric")
    try:
        return NdImage(arr)
    except Exception as exc:
        raise ValueError(f"{name}: {exc} (shape {arr.shape}, dtype {arr.dtype})") from exc


def from_tensor(img: NdImage) -> np.ndarray:
    """Return the tensor's channel-first float32 array without copying."""
    return img.data


def normalize(array) -> np.ndarray:
    """Per-sample standardisation matching the generation pipeline."""
    return from_tensor(zscore_normalize(to_tensor(array)))


def _mask_from(array, name: str) -> ForegroundMask:
    arr = np.asarray(array)
    if arr.dtype != np.bool_:
        raise ValueError(f"{name}: masks must be boolean, got dtype {arr.dtype}")
    return ForegroundMask(arr)


@dataclass(frozen=True)
class BoundTask:
    """Opaque handle around a calibrated task; immutable once created."""

    _task: Task

    @property
    def identity(self) -> str:
        return self._task.identity

    def summary(self) -> dict:
        """Introspection view of the calibrated parameters."""
        out = {"task": self._task.identity}
        out.update(self._task.params.to_dict())
        return out


def bind_calibrate(
    task_name: str,
    dataset_arrays: Sequence,
    plan_dict: dict,
    seed: int,
    uniform_background: bool = False,
) -> BoundTask:
    """Calibrate a task from raw dataset arrays.

    Mirrors the service pipeline: arrays are standardised, foreground masks
    derived when the dataset has a uniform background, and the calibration
    runs on a generator seeded exactly like the calibrate command, so equal
    seeds give equal parameters.
    """
    identity = canonical_identity(task_name)
    if not len(dataset_arrays):
        raise ValueError("dataset_arrays is empty")
    images = [
        zscore_normalize(to_tensor(arr, name=f"dataset_arrays[{k}]"))
        for k, arr in enumerate(dataset_arrays)
    ]
    masks = [foreground_mask(img) for img in images] if uniform_background else None
    plan = ExperimentPlan.from_dict(plan_dict)
    params = calibrate(identity, images, masks, plan, rng_from_seed(int(seed)))
    return BoundTask(Task(identity, params))


def bind_apply(
    task: BoundTask,
    x_i,
    x_j,
    masks: Optional[tuple] = None,
    seed: int = 0,
):
    """Apply a calibrated task to one sample pair.

    Returns (image array, label array, anomaly centres); tensors are
    bit-identical to the core task application under the same seed.
    """
    img_i = to_tensor(x_i, name="x_i")
    img_j = to_tensor(x_j, name="x_j")
    if img_i.data.shape != img_j.data.shape:
        raise ValueError(
            f"x_i shape {img_i.data.shape} != x_j shape {img_j.data.shape}"
        )
    m_i = m_j = None
    if masks is not None:
        pair = tuple(masks)
        if len(pair) != 2:
            raise ValueError("masks must be a (mask_i, mask_j) pair or None")
        m_i = _mask_from(pair[0], "mask_i") if pair[0] is not None else None
        m_j = _mask_from(pair[1], "mask_j") if pair[1] is not None else None
    sample = apply_task(task._task, img_i, img_j, m_i, m_j, rng_from_seed(int(seed)))
    centres = [tuple(int(c) for c in centre) for centre in sample.anomaly_centres]
    return sample.image.data, sample.label.values, centres
