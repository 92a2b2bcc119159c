"""Compartmentalised patch framework: shape creation, spatial and intensity
transforms, direct blending and labelling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import InfeasibleBoundsError
from .image import AnomalyMap, NdImage

SPATIAL_KINDS = ("resize", "rotate", "flip")
INTENSITY_KINDS = ("brightness", "contrast")


@dataclass(frozen=True)
class PatchSpec:
    """Axis-aligned box in the destination frame plus the pixels it owns."""

    origin: tuple[int, ...]
    extent: tuple[int, ...]
    footprint: np.ndarray

    def __post_init__(self):
        origin = tuple(int(v) for v in self.origin)
        extent = tuple(int(v) for v in self.extent)
        fp = np.asarray(self.footprint, dtype=bool)
        if len(origin) != len(extent):
            raise ValueError("origin and extent rank mismatch")
        if any(o < 0 for o in origin) or any(e < 1 for e in extent):
            raise ValueError(f"invalid patch box origin={origin} extent={extent}")
        if fp.shape != extent:
            raise ValueError(f"footprint shape {fp.shape} != extent {extent}")
        if not fp.any():
            raise ValueError("patch footprint is empty")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "footprint", fp)

    @property
    def rank(self) -> int:
        return len(self.origin)

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(o, o + e) for o, e in zip(self.origin, self.extent))

    def centre(self) -> tuple[int, ...]:
        return tuple(o + e // 2 for o, e in zip(self.origin, self.extent))

    def check_inside(self, image_shape: Sequence[int]) -> None:
        if any(o + e > d for o, e, d in zip(self.origin, self.extent, image_shape)):
            raise ValueError(
                f"patch box origin={self.origin} extent={self.extent} "
                f"exceeds image shape {tuple(image_shape)}"
            )


@dataclass(frozen=True)
class PatchTransform:
    """One step of a patch transform chain (spatial or intensity)."""

    kind: str
    scale: tuple[float, ...] | None = None
    angle: float | None = None
    plane: tuple[int, int] = (0, 1)
    axis: int | None = None
    factor: float | None = None

    def __post_init__(self):
        if self.kind not in SPATIAL_KINDS + INTENSITY_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "resize":
            if self.scale is None or any(s <= 0 for s in self.scale):
                raise ValueError("resize requires positive per-axis scales")
        elif self.kind == "rotate":
            if self.angle is None or not (-180.0 < self.angle <= 180.0):
                raise ValueError("rotate requires angle in (-180, 180]")
        elif self.kind == "flip":
            if self.axis is None:
                raise ValueError("flip requires an axis")
        elif self.factor is None or self.factor <= 0:
            raise ValueError(f"{self.kind} requires factor > 0")

    @property
    def is_spatial(self) -> bool:
        return self.kind in SPATIAL_KINDS


def make_rect_patch(image_shape: Sequence[int], extent_bounds, rng) -> PatchSpec:
    """Draw a uniformly placed axis-aligned rectangular patch.

    Extents are drawn per axis first, then the origin, so a fixed seed
    reproduces the same box.
    """
    shape = tuple(int(d) for d in image_shape)
    bounds = [(int(lo), int(hi)) for lo, hi in extent_bounds]
    if len(bounds) != len(shape):
        raise ValueError("extent bounds rank mismatch")
    for (lo, hi), d in zip(bounds, shape):
        if not (1 <= lo <= hi <= d):
            raise InfeasibleBoundsError(
                f"bounds ({lo}, {hi}) infeasible for axis extent {d}"
            )
    extent = tuple(int(rng.integers(lo, hi + 1)) for lo, hi in bounds)
    origin = tuple(int(rng.integers(0, d - e + 1)) for e, d in zip(extent, shape))
    return PatchSpec(origin=origin, extent=extent, footprint=np.ones(extent, dtype=bool))


def _resize_coords(in_extent: int, out_extent: int) -> np.ndarray:
    # align-corners: endpoints map to endpoints; a singleton output samples
    # the input midpoint
    if out_extent == 1:
        return np.array([(in_extent - 1) / 2.0])
    return np.arange(out_extent, dtype=np.float64) * (in_extent - 1) / (out_extent - 1)


def resize_to(patch: NdImage, out_extent: Sequence[int]) -> NdImage:
    """Linear align-corners resize of patch content to a target extent."""
    out_extent = tuple(int(e) for e in out_extent)
    if any(e < 1 for e in out_extent):
        raise ValueError(f"invalid resize target {out_extent}")
    if out_extent == patch.spatial_shape:
        return NdImage(patch.data.copy())
    axes_coords = [_resize_coords(i, o) for i, o in zip(patch.spatial_shape, out_extent)]
    mesh = np.meshgrid(*axes_coords, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh])
    out = np.empty((patch.channels,) + out_extent, dtype=np.float32)
    for c in range(patch.channels):
        vals = ndimage.map_coordinates(
            patch.data[c].astype(np.float64), coords, order=1, mode="nearest"
        )
        out[c] = vals.reshape(out_extent).astype(np.float32)
    return NdImage(out)


def _rot90_exact(data: np.ndarray, quarter_turns: int, plane: tuple[int, int]) -> np.ndarray:
    # plane axes are spatial; shift past the channel axis
    return np.rot90(data, k=quarter_turns % 4, axes=(plane[0] + 1, plane[1] + 1)).copy()


def rotate_patch(
    patch: NdImage, angle: float, plane: tuple[int, int] = (0, 1)
) -> tuple[NdImage, np.ndarray]:
    """Rotate patch content about its centre within the same box.

    Returns the resampled content and the boolean support of pixels whose
    source sample stayed inside the box; out-of-support pixels are zeroed
    and expected to be filled from the destination by the caller.
    """
    spatial = patch.spatial_shape
    rank = len(spatial)
    a, b = plane
    if not (0 <= a < rank and 0 <= b < rank and a != b):
        raise ValueError(f"invalid rotation plane {plane} for rank {rank}")
    quarter, rem = divmod(angle, 90.0)
    if rem == 0.0 and spatial[a] == spatial[b]:
        # exact index permutation; avoids resampling noise at right angles
        rotated = _rot90_exact(patch.data, int(quarter), plane)
        return NdImage(rotated), np.ones(spatial, dtype=bool)

    theta = math.radians(angle)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    centre_a = (spatial[a] - 1) / 2.0
    centre_b = (spatial[b] - 1) / 2.0
    grid = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in spatial], indexing="ij")
    off_a = grid[a] - centre_a
    off_b = grid[b] - centre_b
    # inverse rotation of the output grid back into the source frame
    src_a = cos_t * off_a + sin_t * off_b + centre_a
    src_b = -sin_t * off_a + cos_t * off_b + centre_b
    coords = [g.astype(np.float64) for g in grid]
    coords[a] = src_a
    coords[b] = src_b
    eps = 1e-9
    support = (
        (src_a >= -eps)
        & (src_a <= spatial[a] - 1 + eps)
        & (src_b >= -eps)
        & (src_b <= spatial[b] - 1 + eps)
    )
    stacked = np.stack([c.ravel() for c in coords])
    out = np.zeros_like(patch.data)
    for c in range(patch.channels):
        vals = ndimage.map_coordinates(
            patch.data[c].astype(np.float64), stacked, order=1, mode="nearest"
        )
        out[c] = vals.reshape(spatial).astype(np.float32)
    out[:, ~support] = 0.0
    return NdImage(out), support


def apply_spatial(patch: NdImage, transform: PatchTransform) -> NdImage:
    """Apply a spatial transform (resize / rotate / flip) to patch content."""
    if not transform.is_spatial:
        raise ValueError(f"{transform.kind} is not a spatial transform")
    if transform.kind == "flip":
        return NdImage(np.flip(patch.data, axis=transform.axis + 1).copy())
    if transform.kind == "resize":
        target = tuple(
            max(1, int(round(d * s))) for d, s in zip(patch.spatial_shape, transform.scale)
        )
        return resize_to(patch, target)
    rotated, _ = rotate_patch(patch, transform.angle, transform.plane)
    return rotated


_KIND_ORDER = {"resize": 0, "rotate": 1, "flip": 2, "brightness": 3, "contrast": 4}


def apply_transforms(patch: NdImage, transforms: Sequence[PatchTransform], dataset_min: float = 0.0) -> NdImage:
    """Apply a transform chain in the canonical order resize, rotate, flip,
    then intensity; stable within each kind, so the result depends only on
    the transform list, not on its ordering."""
    ordered = sorted(transforms, key=lambda t: _KIND_ORDER[t.kind])
    out = patch
    for t in ordered:
        if t.is_spatial:
            out = apply_spatial(out, t)
        elif t.kind == "brightness":
            out = apply_brightness(out, t.factor, dataset_min)
        else:
            out = apply_contrast(out, t.factor)
    return out


def apply_brightness(patch: NdImage, factor: float, dataset_min: float) -> NdImage:
    """Scale intensities away from the dataset's global minimum."""
    if factor <= 0:
        raise ValueError("brightness factor must be > 0")
    out = dataset_min + factor * (patch.data.astype(np.float64) - dataset_min)
    return NdImage(out.astype(np.float32))


def apply_contrast(patch: NdImage, factor: float) -> NdImage:
    """Scale intensities about the per-channel patch mean."""
    if factor <= 0:
        raise ValueError("contrast factor must be > 0")
    data = patch.data.astype(np.float64)
    mean = data.mean(axis=tuple(range(1, data.ndim)), keepdims=True)
    return NdImage((mean + factor * (data - mean)).astype(np.float32))


def alpha_blend(dest: NdImage, src_patch: NdImage, spec: PatchSpec, alpha: float) -> NdImage:
    """Convex blend of source content into the destination footprint.

    Pixels outside the footprint are bit-identical to the destination.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if src_patch.spatial_shape != spec.extent:
        raise ValueError(
            f"source patch shape {src_patch.spatial_shape} != spec extent {spec.extent}"
        )
    if src_patch.channels != dest.channels:
        raise ValueError("channel count mismatch")
    spec.check_inside(dest.spatial_shape)
    out = dest.data.copy()
    fp = spec.footprint
    window = out[(slice(None),) + spec.slices()]  # view into out
    blended = (1.0 - alpha) * window[:, fp] + alpha * src_patch.data[:, fp]
    window[:, fp] = blended.astype(np.float32)
    return NdImage(out)


def label_interpolation(spec: PatchSpec, alpha: float, image_shape: Sequence[int]) -> AnomalyMap:
    """Constant label alpha on the footprint, zero elsewhere."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    spec.check_inside(image_shape)
    values = np.zeros(tuple(image_shape), dtype=np.float32)
    values[spec.slices()][spec.footprint] = alpha
    return AnomalyMap(values)


def footprint_union(specs: Sequence[PatchSpec], image_shape: Sequence[int]) -> np.ndarray:
    """Boolean union of patch footprints in the image frame."""
    union = np.zeros(tuple(image_shape), dtype=bool)
    for spec in specs:
        spec.check_inside(image_shape)
        union[spec.slices()] |= spec.footprint
    return union


def label_logistic_diff(orig: NdImage, altered: NdImage, specs: Sequence[PatchSpec], fit) -> AnomalyMap:
    """Label from a scaled logistic of the mean absolute channel difference.

    Zero outside the footprints and wherever the difference vanishes.
    """
    if orig.data.shape != altered.data.shape:
        raise ValueError("original and altered image shapes differ")
    union = footprint_union(specs, orig.spatial_shape)
    diff = np.abs(altered.data.astype(np.float64) - orig.data.astype(np.float64)).mean(axis=0)
    logistic = 1.0 / (1.0 + np.exp(-fit.k * (diff - fit.d0)))
    values = np.where(union & (diff > 0), logistic, 0.0)
    return AnomalyMap(values.astype(np.float32))
