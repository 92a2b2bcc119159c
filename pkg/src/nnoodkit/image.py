"""Core tensor types, per-sample normalisation, coordinate channels and
foreground extraction."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyForegroundError, UnsupportedRankError

SUPPORTED_RANKS = (1, 2, 3)

AUGMENTATION_VOCABULARY = {
    "flip": ("axis",),
    "rotate90": ("plane",),
    "rotate": ("angle_range",),
    "scale": ("range",),
    "gamma": ("range",),
    "noise": ("sigma_range",),
}


@dataclass(frozen=True)
class NdImage:
    """Channel-first image tensor, float32, layout (channels, *spatial).

    Spatial rank must be 1, 2 or 3 and every value finite.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim < 2 or arr.ndim - 1 not in SUPPORTED_RANKS:
            raise UnsupportedRankError(
                f"expected (channels, *spatial) with spatial rank 1-3, got shape {arr.shape}"
            )
        if arr.shape[0] < 1 or min(arr.shape[1:]) < 1:
            raise ValueError(f"degenerate image shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.data.shape[1:]

    @property
    def spatial_rank(self) -> int:
        return self.data.ndim - 1

    @classmethod
    def from_spatial(cls, arr) -> "NdImage":
        """Wrap a bare spatial array as a single-channel image."""
        return cls(np.asarray(arr, dtype=np.float32)[None])


@dataclass(frozen=True)
class ForegroundMask:
    """Boolean map of non-background pixels over an image's spatial shape."""

    mask: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.mask)
        if arr.dtype != np.bool_:
            arr = arr.astype(bool)
        if arr.ndim not in SUPPORTED_RANKS:
            raise UnsupportedRankError(f"mask rank {arr.ndim} unsupported")
        object.__setattr__(self, "mask", arr)

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.mask.shape

    def is_empty(self) -> bool:
        return not bool(self.mask.any())


@dataclass(frozen=True)
class AnomalyMap:
    """Pixel-wise continuous anomaly label in [0, 1] over a spatial shape."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("anomaly map contains non-finite values")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("anomaly map values outside [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.values.shape


@dataclass(frozen=True)
class ForegroundStats:
    """Mean foreground bounding-box extent per axis and mean foreground area."""

    avg_extent: tuple[float, ...]
    avg_area: float

    def __post_init__(self):
        if any(e <= 0 for e in self.avg_extent) or self.avg_area <= 0:
            raise ValueError("foreground statistics must be positive")


@dataclass(frozen=True)
class DatasetDescriptor:
    """User-supplied dataset description loaded from dataset.json."""

    name: str
    spatial_rank: int
    channels: int
    uniform_background: bool
    file_format: str
    safe_augmentations: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.spatial_rank not in SUPPORTED_RANKS:
            raise ValueError(f"spatial_rank must be 1, 2 or 3, got {self.spatial_rank}")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.file_format not in ("png2d", "nifti"):
            raise ValueError(f"unknown file_format {self.file_format!r}")
        for entry in self.safe_augmentations:
            name = entry.get("name")
            if name not in AUGMENTATION_VOCABULARY:
                raise ValueError(f"unknown augmentation {name!r}")
            for key in AUGMENTATION_VOCABULARY[name]:
                if key not in entry:
                    raise ValueError(f"augmentation {name!r} missing parameter {key!r}")


def zscore_normalize(img: NdImage) -> NdImage:
    """Standardise an image to zero mean and unit standard deviation.

    A constant image maps to all zeros instead of raising; degenerate
    slices do occur in padded medical volumes.
    """
    data = img.data.astype(np.float64)
    mean = data.mean()
    std = data.std()
    if std == 0.0:
        return NdImage(np.zeros_like(img.data))
    return NdImage(((data - mean) / std).astype(np.float32))


def positional_encoding(spatial_shape: Sequence[int]) -> NdImage:
    """Coordinate channels in [-1, 1], one per spatial axis.

    Channel ``a`` holds 2*i/(D_a - 1) - 1 along axis ``a`` and is constant
    along every other axis; a singleton axis yields an all-zero channel.
    """
    shape = tuple(int(s) for s in spatial_shape)
    if any(s < 1 for s in shape):
        raise ValueError(f"invalid spatial shape {shape}")
    channels = []
    for axis, extent in enumerate(shape):
        if extent == 1:
            coord = np.zeros(1, dtype=np.float64)
        else:
            coord = 2.0 * np.arange(extent, dtype=np.float64) / (extent - 1) - 1.0
        view = [1] * len(shape)
        view[axis] = extent
        channels.append(np.broadcast_to(coord.reshape(view), shape))
    return NdImage(np.stack(channels).astype(np.float32))


def sobel_magnitude(img: NdImage) -> NdImage:
    """Euclidean norm of the directional Sobel responses, one channel out.

    Multi-channel input is reduced by the channel mean before filtering;
    borders are handled by edge replication.
    """
    if img.spatial_rank < 2:
        raise UnsupportedRankError("sobel_magnitude requires spatial rank 2 or 3")
    plane = img.data.mean(axis=0, dtype=np.float64)
    acc = np.zeros_like(plane)
    for axis in range(plane.ndim):
        resp = ndimage.sobel(plane, axis=axis, mode="nearest")
        acc += resp * resp
    return NdImage(np.sqrt(acc)[None].astype(np.float32))


def _region_threshold(img: NdImage, magnitude: np.ndarray) -> float:
    value_range = float(img.data.max() - img.data.min())
    nonzero = magnitude[magnitude > 0]
    if nonzero.size:
        percentile = float(np.percentile(nonzero, 10))
    else:
        percentile = float(np.finfo(np.float32).tiny)
    return max(1e-6 * value_range, percentile)


def foreground_mask(img: NdImage) -> ForegroundMask:
    """Split background from foreground by gradient-bounded region growing.

    Background is the union of connected low-gradient components grown from
    every image corner through face-adjacent pixels; only meaningful for
    datasets with a consistent, uniform background.
    """
    magnitude = sobel_magnitude(img).data[0].astype(np.float64)
    tau = _region_threshold(img, magnitude)
    low = magnitude < tau
    rank = magnitude.ndim
    structure = ndimage.generate_binary_structure(rank, 1)
    labels, _ = ndimage.label(low, structure=structure)
    background = np.zeros(magnitude.shape, dtype=bool)
    for corner in product(*[(0, -1)] * rank):
        lab = labels[corner]
        if lab > 0:
            background |= labels == lab
    fg = ~background
    if not fg.any():
        raise EmptyForegroundError("every pixel was classified as background")
    return ForegroundMask(fg)


def foreground_stats(masks: Sequence[ForegroundMask]) -> ForegroundStats:
    """Mean bounding-box extent per axis and mean pixel count over masks."""
    if not masks:
        raise ValueError("foreground_stats requires at least one mask")
    extents = []
    areas = []
    for m in masks:
        if m.is_empty():
            raise EmptyForegroundError("cannot take statistics of an empty mask")
        idx = np.nonzero(m.mask)
        extents.append([int(ax.max()) - int(ax.min()) + 1 for ax in idx])
        areas.append(int(m.mask.sum()))
    avg_extent = tuple(float(v) for v in np.mean(extents, axis=0))
    return ForegroundStats(avg_extent=avg_extent, avg_area=float(np.mean(areas)))
