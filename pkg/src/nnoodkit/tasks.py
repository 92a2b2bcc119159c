"""The synthetic anomaly task interface: five concrete tasks (fpi, cutpaste,
pii, nsa, nsa_mixed), dataset-adaptive calibration and label generation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CalibrationError, PlacementError
from .image import AnomalyMap, ForegroundMask, NdImage
from .patches import (
    PatchSpec,
    alpha_blend,
    apply_brightness,
    apply_contrast,
    footprint_union,
    label_interpolation,
    label_logistic_diff,
    make_rect_patch,
    resize_to,
    rotate_patch,
)
from .poisson import seamless_clone

TASK_IDENTITIES = ("fpi", "cutpaste", "pii", "nsa", "nsa_mixed")

PLACEMENT_ATTEMPTS = 200
CALIBRATION_ANOMALIES = 100

# CutPaste geometry, kept from the method's published defaults
CUTPASTE_AREA_RANGE = (0.02, 0.15)
CUTPASTE_ASPECT_RANGE = (0.3, 3.3)

_LN9 = math.log(9.0)
_LN99 = math.log(99.0)


def canonical_identity(name: str) -> str:
    ident = name.replace("-", "_").lower()
    if ident not in TASK_IDENTITIES:
        raise ValueError(f"unknown task {name!r}; expected one of {TASK_IDENTITIES}")
    return ident


@dataclass(frozen=True)
class LogisticFit:
    """Label logistic L(d) = 1 / (1 + exp(-k (d - d0))).

    Fitted so L(0) = 0.1 and L(q40) = 0.99 where q40 is the 40th
    percentile of the calibration intensity differences.
    """

    k: float
    d0: float
    q40: float

    def __post_init__(self):
        if self.k <= 0 or self.q40 <= 0:
            raise ValueError("logistic fit requires k > 0 and q40 > 0")

    @classmethod
    def from_q40(cls, q40: float) -> "LogisticFit":
        if q40 <= 0:
            raise CalibrationError(f"calibration percentile must be positive, got {q40}")
        k = (_LN9 + _LN99) / q40
        return cls(k=k, d0=_LN9 / k, q40=q40)

    def label(self, diff):
        return 1.0 / (1.0 + np.exp(-self.k * (np.asarray(diff, dtype=np.float64) - self.d0)))

    def constraint_errors(self) -> tuple[float, float]:
        return (
            abs(float(self.label(0.0)) - 0.1),
            abs(float(self.label(self.q40)) - 0.99),
        )


@dataclass(frozen=True)
class JitterParams:
    brightness_range: tuple[float, float] = (0.9, 1.1)
    contrast_range: tuple[float, float] = (0.9, 1.1)
    rotate_range: tuple[float, float] = (-45.0, 45.0)


@dataclass(frozen=True)
class TaskParams:
    """Calibrated task parameters; the logistic block exists only for the
    nsa variants."""

    extent_bounds: tuple[tuple[int, int], ...]
    max_anomalies: int
    min_fg_fraction: float
    alpha_range: tuple[float, float]
    dataset_min: float
    jitter: Optional[JitterParams] = None
    logistic: Optional[LogisticFit] = None

    def __post_init__(self):
        for lo, hi in self.extent_bounds:
            if not (1 <= lo <= hi):
                raise ValueError(f"invalid extent bounds ({lo}, {hi})")
        if self.max_anomalies < 1:
            raise ValueError("max_anomalies must be >= 1")
        if not (0.0 <= self.min_fg_fraction <= 1.0):
            raise ValueError("min_fg_fraction must lie in [0, 1]")
        lo, hi = self.alpha_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("alpha_range must be an ordered pair within [0, 1]")

    def to_dict(self) -> dict:
        out = {
            "extent_bounds": [list(b) for b in self.extent_bounds],
            "max_anomalies": self.max_anomalies,
            "min_fg_fraction": self.min_fg_fraction,
            "alpha_range": list(self.alpha_range),
            "dataset_min": self.dataset_min,
            "jitter": None,
            "logistic": None,
        }
        if self.jitter is not None:
            out["jitter"] = {
                "brightness_range": list(self.jitter.brightness_range),
                "contrast_range": list(self.jitter.contrast_range),
                "rotate_range": list(self.jitter.rotate_range),
            }
        if self.logistic is not None:
            out["logistic"] = {
                "k": self.logistic.k,
                "d0": self.logistic.d0,
                "q40": self.logistic.q40,
            }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TaskParams":
        jitter = None
        if data.get("jitter"):
            j = data["jitter"]
            jitter = JitterParams(
                brightness_range=tuple(j["brightness_range"]),
                contrast_range=tuple(j["contrast_range"]),
                rotate_range=tuple(j["rotate_range"]),
            )
        logistic = None
        if data.get("logistic"):
            lg = data["logistic"]
            logistic = LogisticFit(k=lg["k"], d0=lg["d0"], q40=lg["q40"])
        return cls(
            extent_bounds=tuple((int(lo), int(hi)) for lo, hi in data["extent_bounds"]),
            max_anomalies=int(data["max_anomalies"]),
            min_fg_fraction=float(data["min_fg_fraction"]),
            alpha_range=tuple(data["alpha_range"]),
            dataset_min=float(data["dataset_min"]),
            jitter=jitter,
            logistic=logistic,
        )


@dataclass(frozen=True)
class Task:
    identity: str
    params: TaskParams

    def __post_init__(self):
        ident = canonical_identity(self.identity)
        object.__setattr__(self, "identity", ident)
        needs_logistic = ident in ("nsa", "nsa_mixed")
        if needs_logistic and self.params.logistic is None:
            raise ValueError(f"{ident} requires a calibrated logistic fit")
        if not needs_logistic and self.params.logistic is not None:
            raise ValueError(f"{ident} must not carry a logistic fit")


@dataclass(frozen=True)
class AugmentedSample:
    """Altered image, its continuous pixel label and patch bookkeeping."""

    image: NdImage
    label: AnomalyMap
    anomaly_centres: tuple[tuple[int, ...], ...]
    patches: tuple[PatchSpec, ...]
    alphas: tuple[float, ...] = ()
    source_origins: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        if self.label.spatial_shape != self.image.spatial_shape:
            raise ValueError("label and image spatial shapes differ")
        for centre in self.anomaly_centres:
            if any(not (0 <= c < d) for c, d in zip(centre, self.image.spatial_shape)):
                raise ValueError(f"anomaly centre {centre} outside the image")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _fraction_bounds(reference: Sequence[float], lo_frac: float, hi_frac: float) -> tuple:
    bounds = []
    for ref in reference:
        lo = max(1, _round_half_up(lo_frac * ref))
        hi = max(lo, _round_half_up(hi_frac * ref))
        bounds.append((lo, hi))
    return tuple(bounds)


def _clamp_bounds(bounds, image_shape) -> tuple:
    clamped = []
    for (lo, hi), d in zip(bounds, image_shape):
        lo_c = max(1, min(int(lo), int(d)))
        hi_c = max(lo_c, min(int(hi), int(d)))
        clamped.append((lo_c, hi_c))
    return tuple(clamped)


def _cutpaste_extent_bounds(mean_extent: Sequence[float]) -> tuple:
    """Informative per-axis bounds spanned by the area/aspect sampler."""
    rank = len(mean_extent)
    volume = float(np.prod(mean_extent))
    lo_r, hi_r = CUTPASTE_AREA_RANGE
    lo_q, hi_q = CUTPASTE_ASPECT_RANGE
    bounds = []
    for axis in range(rank):
        combos = []
        for r in (lo_r, hi_r):
            for q in (lo_q, hi_q):
                base = (r * volume / q ** (rank - 1)) ** (1.0 / rank)
                combos.append(base if axis == 0 else q * base)
        lo = max(1, int(math.floor(min(combos))))
        hi = max(lo, int(math.ceil(max(combos))))
        bounds.append((lo, min(hi, int(mean_extent[axis]))))
    return tuple((lo, max(lo, hi)) for lo, hi in bounds)


def _masks_or_none(masks, index):
    if masks is None:
        return None
    return masks[index]


def calibrate(
    task_identity: str,
    dataset: Sequence[NdImage],
    masks: Optional[Sequence[ForegroundMask]],
    plan,
    rng: np.random.Generator,
) -> TaskParams:
    """Derive task parameters from the dataset and the experiment plan.

    fpi/pii size patches against the plan patch size, cutpaste against the
    image frame, and the nsa variants against the average foreground extent
    with a logistic label fit from generated calibration anomalies.
    """
    identity = canonical_identity(task_identity)
    if not dataset:
        raise CalibrationError("cannot calibrate on an empty dataset")
    if masks is not None and len(masks) != len(dataset):
        raise CalibrationError("mask count does not match dataset size")
    # brightness scaling is anchored at the minimum of the tensors the task
    # actually sees (post-normalisation), not the raw file minimum
    dataset_min = min(float(img.data.min()) for img in dataset)

    if identity in ("fpi", "pii"):
        bounds = _fraction_bounds(plan.patch_size, 0.10, 0.40)
        return TaskParams(
            extent_bounds=bounds,
            max_anomalies=1,
            min_fg_fraction=0.0,
            alpha_range=(0.05, 0.95),
            dataset_min=dataset_min,
        )

    if identity == "cutpaste":
        mean_extent = np.mean([img.spatial_shape for img in dataset], axis=0)
        return TaskParams(
            extent_bounds=_cutpaste_extent_bounds(mean_extent),
            max_anomalies=1,
            min_fg_fraction=0.0,
            alpha_range=(0.05, 0.95),
            dataset_min=dataset_min,
            jitter=JitterParams(),
        )

    # nsa / nsa_mixed
    if masks is not None:
        from .image import foreground_stats

        avg_extent = foreground_stats(masks).avg_extent
    elif plan.foreground is not None:
        avg_extent = plan.foreground.avg_extent
    else:
        # no background separation: the whole image counts as foreground
        avg_extent = tuple(np.mean([img.spatial_shape for img in dataset], axis=0))
    bounds = _fraction_bounds(avg_extent, 0.05, 0.50)
    proto = TaskParams(
        extent_bounds=bounds,
        max_anomalies=3,
        min_fg_fraction=0.25,
        alpha_range=(0.05, 0.95),
        dataset_min=dataset_min,
    )
    mode = "source" if identity == "nsa" else "mixed"
    pool = []
    for _ in range(CALIBRATION_ANOMALIES):
        i = int(rng.integers(len(dataset)))
        if len(dataset) > 1:
            j = int(rng.integers(len(dataset) - 1))
            if j >= i:
                j += 1
        else:
            j = i
        x_i, x_j = dataset[i], dataset[j]
        try:
            altered, specs, _ = _apply_nsa_patches(
                x_i, x_j, _masks_or_none(masks, i), _masks_or_none(masks, j), proto, mode, rng
            )
        except PlacementError:
            continue
        union = footprint_union(specs, x_i.spatial_shape)
        diff = np.abs(
            altered.data.astype(np.float64) - x_i.data.astype(np.float64)
        ).mean(axis=0)
        positive = diff[union & (diff > 0)]
        if positive.size:
            pool.append(positive)
    if not pool:
        raise CalibrationError("calibration anomalies produced no intensity differences")
    q40 = float(np.percentile(np.concatenate(pool), 40))
    return TaskParams(
        extent_bounds=bounds,
        max_anomalies=3,
        min_fg_fraction=0.25,
        alpha_range=(0.05, 0.95),
        dataset_min=dataset_min,
        logistic=LogisticFit.from_q40(q40),
    )


def _extract_box(img: NdImage, spec: PatchSpec) -> NdImage:
    return NdImage(img.data[(slice(None),) + spec.slices()].copy())


def _fg_fraction(mask: Optional[ForegroundMask], spec: PatchSpec) -> float:
    if mask is None:
        return 1.0
    window = mask.mask[spec.slices()]
    return float(window.mean())


def _sample_constrained_box(
    image_shape,
    bounds,
    mask: Optional[ForegroundMask],
    min_fraction: float,
    rng: np.random.Generator,
) -> PatchSpec:
    for _ in range(PLACEMENT_ATTEMPTS):
        spec = make_rect_patch(image_shape, bounds, rng)
        if min_fraction <= 0.0 or _fg_fraction(mask, spec) >= min_fraction:
            return spec
    raise PlacementError(
        f"no placement met foreground fraction {min_fraction} "
        f"after {PLACEMENT_ATTEMPTS} attempts"
    )


def _apply_fpi_like(task: Task, x_i: NdImage, x_j: NdImage, rng, poisson: bool) -> AugmentedSample:
    shape = x_i.spatial_shape
    bounds = _clamp_bounds(task.params.extent_bounds, shape)
    spec = make_rect_patch(shape, bounds, rng)
    lo, hi = task.params.alpha_range
    alpha = float(rng.uniform(lo, hi))
    src = _extract_box(x_j, spec)
    if poisson:
        out = seamless_clone(x_i, src, spec, "interpolated", alpha)
    else:
        out = alpha_blend(x_i, src, spec, alpha)
    label = label_interpolation(spec, alpha, shape)
    return AugmentedSample(
        image=out,
        label=label,
        anomaly_centres=(spec.centre(),),
        patches=(spec,),
        alphas=(alpha,),
        source_origins=(spec.origin,),
    )


def _sample_cutpaste_extent(image_shape, rng) -> tuple[int, ...]:
    rank = len(image_shape)
    ratio = float(rng.uniform(*CUTPASTE_AREA_RANGE))
    aspects = [float(rng.uniform(*CUTPASTE_ASPECT_RANGE)) for _ in range(rank - 1)]
    volume = ratio * float(np.prod(image_shape))
    base = (volume / float(np.prod(aspects)) if aspects else volume) ** (1.0 / rank)
    sizes = [base] + [q * base for q in aspects]
    return tuple(
        max(1, min(int(d), _round_half_up(s))) for s, d in zip(sizes, image_shape)
    )


def _rotation_planes(rank: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(rank) for b in range(a + 1, rank)]


def _apply_cutpaste(task: Task, x_i: NdImage, rng) -> AugmentedSample:
    shape = x_i.spatial_shape
    params = task.params
    extent = _sample_cutpaste_extent(shape, rng)
    src_origin = tuple(int(rng.integers(0, d - e + 1)) for e, d in zip(extent, shape))
    dst_origin = src_origin
    for _ in range(PLACEMENT_ATTEMPTS):
        candidate = tuple(int(rng.integers(0, d - e + 1)) for e, d in zip(extent, shape))
        if candidate != src_origin:
            dst_origin = candidate
            break
    else:
        raise PlacementError("could not draw a paste location distinct from the source")

    footprint = np.ones(extent, dtype=bool)
    content = _extract_box(
        x_i, PatchSpec(origin=src_origin, extent=extent, footprint=footprint)
    )
    dst_box = x_i.data[(slice(None),) + tuple(slice(o, o + e) for o, e in zip(dst_origin, extent))]

    jitter = params.jitter or JitterParams()
    if rng.random() < 0.5:
        planes = _rotation_planes(len(shape))
        plane = planes[int(rng.integers(len(planes)))]
        angle = float(rng.uniform(*jitter.rotate_range))
        content, support = rotate_patch(content, angle, plane)
        footprint &= support
        if not footprint.any():
            raise PlacementError("rotation left no supported patch pixels")
        filled = content.data.copy()
        filled[:, ~support] = dst_box[:, ~support]
        content = NdImage(filled)
    if rng.random() < 0.5:
        content = apply_brightness(
            content, float(rng.uniform(*jitter.brightness_range)), params.dataset_min
        )
    if rng.random() < 0.5:
        content = apply_contrast(content, float(rng.uniform(*jitter.contrast_range)))

    spec = PatchSpec(origin=dst_origin, extent=extent, footprint=footprint)
    out = x_i.data.copy()
    window = out[(slice(None),) + spec.slices()]
    window[:, footprint] = content.data[:, footprint]
    label = np.zeros(shape, dtype=np.float32)
    label[spec.slices()][footprint] = 1.0
    return AugmentedSample(
        image=NdImage(out),
        label=AnomalyMap(label),
        anomaly_centres=(spec.centre(),),
        patches=(spec,),
        source_origins=(src_origin,),
    )


def _apply_nsa_patches(
    x_i: NdImage,
    x_j: NdImage,
    m_i: Optional[ForegroundMask],
    m_j: Optional[ForegroundMask],
    params: TaskParams,
    mode: str,
    rng: np.random.Generator,
) -> tuple[NdImage, list[PatchSpec], list[tuple[int, ...]]]:
    shape = x_i.spatial_shape
    bounds = _clamp_bounds(params.extent_bounds, shape)
    count = int(rng.integers(1, params.max_anomalies + 1))
    current = x_i
    specs: list[PatchSpec] = []
    origins: list[tuple[int, ...]] = []
    for _ in range(count):
        src_spec = _sample_constrained_box(
            x_j.spatial_shape, bounds, m_j, params.min_fg_fraction, rng
        )
        dst_spec = _sample_constrained_box(shape, bounds, m_i, params.min_fg_fraction, rng)
        content = resize_to(_extract_box(x_j, src_spec), dst_spec.extent)
        current = seamless_clone(current, content, dst_spec, mode)
        specs.append(dst_spec)
        origins.append(src_spec.origin)
    return current, specs, origins


def _apply_nsa(task: Task, x_i, x_j, m_i, m_j, rng) -> AugmentedSample:
    mode = "source" if task.identity == "nsa" else "mixed"
    out, specs, origins = _apply_nsa_patches(x_i, x_j, m_i, m_j, task.params, mode, rng)
    label = label_logistic_diff(x_i, out, specs, task.params.logistic)
    return AugmentedSample(
        image=out,
        label=label,
        anomaly_centres=tuple(s.centre() for s in specs),
        patches=tuple(specs),
        source_origins=tuple(origins),
    )


def apply_task(
    task: Task,
    x_i: NdImage,
    x_j: NdImage,
    m_i: Optional[ForegroundMask] = None,
    m_j: Optional[ForegroundMask] = None,
    rng: Optional[np.random.Generator] = None,
) -> AugmentedSample:
    """Generate one augmented sample and its pixel-wise label.

    Pixels outside every patch footprint are bit-identical to ``x_i``;
    randomness comes only from the supplied generator.
    """
    if rng is None:
        raise ValueError("apply_task requires an explicit random generator")
    if x_i.data.shape != x_j.data.shape:
        raise ValueError(
            f"sample shapes differ: {x_i.data.shape} vs {x_j.data.shape}"
        )
    identity = task.identity
    if identity == "fpi":
        return _apply_fpi_like(task, x_i, x_j, rng, poisson=False)
    if identity == "pii":
        return _apply_fpi_like(task, x_i, x_j, rng, poisson=True)
    if identity == "cutpaste":
        return _apply_cutpaste(task, x_i, rng)
    return _apply_nsa(task, x_i, x_j, m_i, m_j, rng)


def score_transform(task_identity: str, raw_scores) -> AnomalyMap:
    """Map raw pixel scores into [0, 1].

    Scores already in range pass through unchanged; anything unbounded is
    squashed by a logistic and clamped.
    """
    canonical_identity(task_identity)
    arr = np.asarray(raw_scores, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("raw scores must be finite")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        arr = 1.0 / (1.0 + np.exp(-arr))
        arr = np.clip(arr, 0.0, 1.0)
    return AnomalyMap(arr.astype(np.float32))
