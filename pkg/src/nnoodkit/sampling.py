"""Inference patch grids, anomaly-oversampled training locations and
Gaussian-weighted tile aggregation."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from .errors import CoverageError
from .image import AnomalyMap, NdImage

OVERSAMPLE_NUMERATOR = 3  # 30% of each batch contains an anomaly centre
OVERSAMPLE_DENOMINATOR = 10
WEIGHT_FLOOR = 1e-8


@dataclass(frozen=True)
class PatchGrid:
    """Evenly spread patch origins covering the image, flush at both ends."""

    patch_size: tuple[int, ...]
    positions: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class TrainingLocations:
    """Drawn patch origins; the first ``n_oversampled`` contain a centre."""

    locations: tuple[tuple[int, ...], ...]
    n_oversampled: int
    oversample_satisfied: bool


def _axis_positions(extent: int, patch: int) -> list[int]:
    if patch > extent:
        raise ValueError(f"patch size {patch} exceeds image extent {extent}")
    if patch == extent:
        return [0]
    span = extent - patch
    steps = (2 * span + patch - 1) // patch + 1  # ceil(span / (patch/2)) + 1
    raw = [int((i * span) / (steps - 1) + 0.5) for i in range(steps)]
    out = [raw[0]]
    for pos in raw[1:]:
        if pos != out[-1]:
            out.append(pos)
    return out


def inference_grid(image_shape: Sequence[int], patch_size: Sequence[int]) -> PatchGrid:
    """Half-patch-stride grid with evenly redistributed, rounded positions."""
    shape = tuple(int(d) for d in image_shape)
    patch = tuple(int(p) for p in patch_size)
    if len(shape) != len(patch):
        raise ValueError("image and patch rank mismatch")
    axes = [_axis_positions(d, p) for d, p in zip(shape, patch)]
    return PatchGrid(patch_size=patch, positions=tuple(product(*axes)))


def _ceil_fraction(batch: int) -> int:
    return -((-OVERSAMPLE_NUMERATOR * batch) // OVERSAMPLE_DENOMINATOR)


def sample_training_locations(
    grid: PatchGrid,
    anomaly_centres: Sequence[Sequence[int]],
    batch: int,
    rng: np.random.Generator,
) -> TrainingLocations:
    """Draw batch patch origins, forcing 30% to contain an anomaly centre.

    When no grid position contains a centre every draw is uniform and the
    result is flagged.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if not grid.positions:
        raise ValueError("empty patch grid")
    centres = [tuple(int(c) for c in centre) for centre in anomaly_centres]
    feasible = [
        pos
        for pos in grid.positions
        if any(
            all(p <= c <= p + s - 1 for p, c, s in zip(pos, centre, grid.patch_size))
            for centre in centres
        )
    ]
    n_over = min(_ceil_fraction(batch), batch)
    drawn: list[tuple[int, ...]] = []
    satisfied = bool(feasible)
    if satisfied:
        for _ in range(n_over):
            drawn.append(feasible[int(rng.integers(len(feasible)))])
    else:
        n_over = 0
    while len(drawn) < batch:
        drawn.append(grid.positions[int(rng.integers(len(grid.positions)))])
    return TrainingLocations(
        locations=tuple(drawn), n_oversampled=n_over, oversample_satisfied=satisfied
    )


def extract_patch(img: NdImage, origin: Sequence[int], patch_size: Sequence[int]) -> NdImage:
    """Contiguous copy of a patch window; the source is left unmodified."""
    origin = tuple(int(o) for o in origin)
    patch = tuple(int(p) for p in patch_size)
    for o, p, d in zip(origin, patch, img.spatial_shape):
        if o < 0 or o + p > d:
            raise ValueError(
                f"patch origin {origin} size {patch} outside image {img.spatial_shape}"
            )
    window = img.data[(slice(None),) + tuple(slice(o, o + p) for o, p in zip(origin, patch))]
    return NdImage(window.copy())


def gaussian_tile_weights(patch_size: Sequence[int]) -> np.ndarray:
    """Separable centre-peaked weights with sigma = patch/8, floored at 1e-8."""
    weight = np.ones((), dtype=np.float64)
    for extent in patch_size:
        sigma = extent / 8.0
        centre = (extent - 1) / 2.0
        axis = np.exp(-0.5 * ((np.arange(extent) - centre) / sigma) ** 2)
        weight = np.multiply.outer(weight, axis)
    return np.maximum(weight, WEIGHT_FLOOR)


def aggregate_tiles(
    tiles: Sequence[tuple[Sequence[int], np.ndarray]],
    image_shape: Sequence[int],
    patch_size: Sequence[int],
) -> AnomalyMap:
    """Blend overlapping score tiles by Gaussian-weighted averaging.

    Tiles are accumulated in the given order so results are reproducible
    bit for bit; any pixel left uncovered raises.
    """
    shape = tuple(int(d) for d in image_shape)
    patch = tuple(int(p) for p in patch_size)
    weight = gaussian_tile_weights(patch)
    numerator = np.zeros(shape, dtype=np.float64)
    denominator = np.zeros(shape, dtype=np.float64)
    covered = np.zeros(shape, dtype=bool)
    lo, hi = np.inf, -np.inf
    for origin, scores in tiles:
        values = np.asarray(scores, dtype=np.float64)
        if values.shape != patch:
            raise ValueError(f"tile shape {values.shape} != patch size {patch}")
        if values.size:
            lo = min(lo, float(values.min()))
            hi = max(hi, float(values.max()))
        window = tuple(slice(int(o), int(o) + p) for o, p in zip(origin, patch))
        if any(s.start < 0 or s.stop > d for s, d in zip(window, shape)):
            raise ValueError(f"tile at {tuple(origin)} falls outside the image")
        numerator[window] += weight * values
        denominator[window] += weight
        covered[window] = True
    if not covered.all():
        raise CoverageError(f"{int((~covered).sum())} pixels not covered by any tile")
    blended = numerator / denominator
    # exact arithmetic keeps a weighted mean inside [lo, hi]; clip guards
    # against float round-off at the boundaries
    blended = np.clip(blended, lo, hi)
    return AnomalyMap(blended.astype(np.float32))
