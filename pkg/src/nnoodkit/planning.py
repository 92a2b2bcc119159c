"""Dataset layout scanning and experiment planning."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .errors import DatasetError
from .formats import IMAGE_EXTENSIONS, load_image, read_json
from .image import DatasetDescriptor, ForegroundStats, NdImage, foreground_mask

PATCH_MULTIPLE = 16
PATCH_FLOOR = 32
PATCH_CAP = {1: 256, 2: 256, 3: 96}

NORMALISATION = "zscore"


@dataclass(frozen=True)
class ExperimentPlan:
    """Dataset-derived parameters every task calibration starts from."""

    patch_size: tuple[int, ...]
    dataset_min: float
    sample_count: int
    normalisation: str = NORMALISATION
    foreground: Optional[ForegroundStats] = None

    def to_dict(self) -> dict:
        fg = None
        if self.foreground is not None:
            fg = {
                "avg_extent": list(self.foreground.avg_extent),
                "avg_area": self.foreground.avg_area,
            }
        return {
            "patch_size": list(self.patch_size),
            "dataset_min": self.dataset_min,
            "sample_count": self.sample_count,
            "normalisation": self.normalisation,
            "foreground": fg,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        fg = None
        if data.get("foreground"):
            fg = ForegroundStats(
                avg_extent=tuple(data["foreground"]["avg_extent"]),
                avg_area=float(data["foreground"]["avg_area"]),
            )
        return cls(
            patch_size=tuple(int(p) for p in data["patch_size"]),
            dataset_min=float(data["dataset_min"]),
            sample_count=int(data["sample_count"]),
            normalisation=data.get("normalisation", NORMALISATION),
            foreground=fg,
        )


def descriptor_from_dict(data: dict) -> DatasetDescriptor:
    try:
        return DatasetDescriptor(
            name=data["name"],
            spatial_rank=int(data["spatial_rank"]),
            channels=int(data["channels"]),
            uniform_background=bool(data["uniform_background"]),
            file_format=data["file_format"],
            safe_augmentations=tuple(data.get("safe_augmentations", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed dataset descriptor: {exc}") from exc


@dataclass(frozen=True)
class DatasetLayout:
    """On-disk dataset: dataset.json plus imagesTr/imagesTs/labelsTs."""

    root: Path
    descriptor: DatasetDescriptor
    train_images: tuple[Path, ...]
    test_images: tuple[Path, ...]
    test_labels: tuple[Path, ...]

    @classmethod
    def scan(cls, root) -> "DatasetLayout":
        root = Path(root)
        descriptor_path = root / "dataset.json"
        if not descriptor_path.is_file():
            raise DatasetError(f"{root}: missing dataset.json")
        try:
            descriptor = descriptor_from_dict(read_json(descriptor_path))
        except DatasetError:
            raise
        except Exception as exc:
            raise DatasetError(f"{descriptor_path}: {exc}") from exc
        train = _list_images(root / "imagesTr")
        if not train:
            raise DatasetError(f"{root}: imagesTr contains no images")
        test = _list_images(root / "imagesTs") if (root / "imagesTs").is_dir() else ()
        labels = ()
        if (root / "labelsTs").is_dir():
            labels = tuple(
                sorted(
                    p
                    for p in (root / "labelsTs").iterdir()
                    if p.suffix in IMAGE_EXTENSIONS + (".json",)
                )
            )
        return cls(
            root=root,
            descriptor=descriptor,
            train_images=train,
            test_images=tuple(test),
            test_labels=labels,
        )

    def load_train(self) -> list[NdImage]:
        images = []
        for path in self.train_images:
            try:
                images.append(load_image(path))
            except DatasetError:
                raise
            except Exception as exc:
                raise DatasetError(f"unreadable image {path}: {exc}") from exc
        ranks = {img.spatial_rank for img in images}
        chans = {img.channels for img in images}
        if len(ranks) != 1 or len(chans) != 1:
            raise DatasetError(
                f"training images disagree on rank/channels: ranks={ranks} channels={chans}"
            )
        if next(iter(ranks)) != self.descriptor.spatial_rank:
            raise DatasetError(
                f"descriptor rank {self.descriptor.spatial_rank} != image rank {next(iter(ranks))}"
            )
        return images


def _list_images(directory: Path) -> tuple[Path, ...]:
    if not directory.is_dir():
        return ()
    return tuple(sorted(p for p in directory.iterdir() if p.suffix in IMAGE_EXTENSIONS))


def _lower_median(values: Sequence[int]) -> int:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def plan_patch_size(median_shape: Sequence[int], rank: int) -> tuple[int, ...]:
    """Cap, snap down to a multiple of 16 and floor at 32 (or the axis
    extent when the image itself is smaller)."""
    cap = PATCH_CAP[rank]
    out = []
    for extent in median_shape:
        p = min(int(extent), cap)
        p = (p // PATCH_MULTIPLE) * PATCH_MULTIPLE
        p = max(p, PATCH_FLOOR)
        if p > extent:
            p = int(extent)
        out.append(p)
    return tuple(out)


def compute_plan(images: Sequence[NdImage], descriptor: DatasetDescriptor) -> ExperimentPlan:
    """Derive the experiment plan from the normal training images."""
    if not images:
        raise DatasetError("cannot plan on an empty dataset")
    rank = images[0].spatial_rank
    median_shape = tuple(
        _lower_median([img.spatial_shape[a] for img in images]) for a in range(rank)
    )
    dataset_min = min(float(img.data.min()) for img in images)
    foreground = None
    if descriptor.uniform_background:
        masks = [foreground_mask(img) for img in images]
        from .image import foreground_stats

        foreground = foreground_stats(masks)
    return ExperimentPlan(
        patch_size=plan_patch_size(median_shape, rank),
        dataset_min=dataset_min,
        sample_count=len(images),
        foreground=foreground,
    )
