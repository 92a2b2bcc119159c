import json
from pathlib import Path

import numpy as np
import pytest

from nnoodkit.formats import write_png
from nnoodkit.image import NdImage


def make_texture(rng: np.random.Generator, shape=(64, 64), blobs=4) -> np.ndarray:
    """Smooth random blob texture, values roughly in [0, 1.5]."""
    grids = np.meshgrid(*[np.arange(s, dtype=np.float64) for s in shape], indexing="ij")
    img = np.zeros(shape, dtype=np.float64)
    for _ in range(blobs):
        centre = [rng.uniform(s * 0.15, s * 0.85) for s in shape]
        sigma = rng.uniform(min(shape) * 0.06, min(shape) * 0.2)
        dist2 = sum((g - c) ** 2 for g, c in zip(grids, centre))
        img += rng.uniform(0.3, 1.0) * np.exp(-dist2 / (2 * sigma * sigma))
    img += 0.05 * rng.standard_normal(shape)
    return img


def texture_images(seed=42, count=8, shape=(48, 48)) -> list[NdImage]:
    rng = np.random.default_rng(seed)
    return [NdImage.from_spatial(make_texture(rng, shape)) for _ in range(count)]


def write_texture_dataset(root: Path, count=20, shape=(64, 64), seed=42, uniform_background=False) -> Path:
    """PNG dataset laid out as dataset.json + imagesTr/."""
    ds = Path(root)
    (ds / "imagesTr").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for k in range(count):
        img = make_texture(rng, shape)
        lo, hi = img.min(), img.max()
        codes = np.round((img - lo) / (hi - lo) * 65535).astype(np.uint16)
        write_png(ds / "imagesTr" / f"case_{k:03d}.png", codes[None])
    descriptor = {
        "name": "texture-toy",
        "spatial_rank": len(shape),
        "channels": 1,
        "uniform_background": uniform_background,
        "file_format": "png2d",
        "safe_augmentations": [{"name": "flip", "axis": 1}],
    }
    (ds / "dataset.json").write_text(json.dumps(descriptor))
    return ds


@pytest.fixture(scope="session")
def texture_dataset_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("texture_ds")
    return write_texture_dataset(root, count=20, shape=(64, 64), seed=42)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
