"""Image file I/O: PNG (8/16-bit) via Pillow, a self-contained NIfTI-1
codec, deterministic quantisation and atomic writes."""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError
from .image import NdImage

PNG_EXTENSIONS = (".png",)
NIFTI_EXTENSIONS = (".nii",)
IMAGE_EXTENSIONS = PNG_EXTENSIONS + NIFTI_EXTENSIONS

LABEL_SCALE = 1.0 / 65535.0

_NIFTI_MAGIC = b"n+1\x00"
_NIFTI_FLOAT32 = 16


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def atomic_write_json(path: Path, obj) -> None:
    atomic_write_bytes(Path(path), canonical_json(obj).encode("utf-8"))


def read_json(path: Path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


# ---------------------------------------------------------------------------
# quantisation


def quantize(data: np.ndarray, levels: int) -> tuple[np.ndarray, float, float]:
    """Linear quantisation to [0, levels]; returns (codes, minimum, scale)."""
    dmin = float(data.min())
    dmax = float(data.max())
    if dmax == dmin:
        return np.zeros(data.shape, dtype=np.uint32), dmin, 1.0
    scale = (dmax - dmin) / levels
    codes = np.round((data.astype(np.float64) - dmin) / scale)
    return np.clip(codes, 0, levels).astype(np.uint32), dmin, scale


def dequantize(codes: np.ndarray, minimum: float, scale: float) -> np.ndarray:
    return (np.float32(minimum) + codes.astype(np.float32) * np.float32(scale)).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG


def _png_bytes(arr: np.ndarray) -> bytes:
    image = Image.fromarray(arr)
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def write_png(path: Path, channels_first: np.ndarray) -> None:
    """Write integer image data (channel-first) as grayscale or RGB(A) PNG."""
    arr = channels_first
    if arr.ndim != 3:
        raise ValueError(f"png writer expects (channels, H, W), got {arr.shape}")
    c = arr.shape[0]
    if c == 1:
        plane = arr[0]
        if plane.dtype == np.uint16:
            payload = _png_bytes(plane)
        else:
            payload = _png_bytes(plane.astype(np.uint8))
    elif c in (3, 4):
        payload = _png_bytes(np.moveaxis(arr.astype(np.uint8), 0, -1))
    else:
        raise ValueError(f"png supports 1, 3 or 4 channels, got {c}")
    atomic_write_bytes(Path(path), payload)


def read_png(path: Path) -> np.ndarray:
    with Image.open(path) as image:
        arr = np.array(image)
    if arr.ndim == 2:
        return arr[None]
    return np.moveaxis(arr, -1, 0)


# ---------------------------------------------------------------------------
# NIfTI-1 (single-file .nii, little-endian, optional trailing channel dim)


def write_nifti(path: Path, channels_first: np.ndarray) -> None:
    data = np.asarray(channels_first, dtype=np.float32)
    channels = data.shape[0]
    spatial = data.shape[1:]
    rank = len(spatial)
    ndim = rank + (1 if channels > 1 else 0)
    dim = [1] * 8
    dim[0] = ndim
    for axis, extent in enumerate(reversed(spatial)):
        dim[axis + 1] = int(extent)
    if channels > 1:
        dim[rank + 1] = channels
    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, *dim)
    struct.pack_into("<h", header, 70, _NIFTI_FLOAT32)
    struct.pack_into("<h", header, 72, 32)
    struct.pack_into("<8f", header, 76, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", header, 108, 352.0)
    struct.pack_into("<f", header, 112, 1.0)  # scl_slope
    header[344:348] = _NIFTI_MAGIC
    # spatial axes reversed so the fastest-varying file axis is the last
    # numpy axis; channels ride the following dimension
    volume = np.moveaxis(data, 0, -1)
    volume = volume.transpose(tuple(reversed(range(rank))) + (rank,))
    payload = bytes(header) + b"\x00\x00\x00\x00" + volume.tobytes(order="F")
    atomic_write_bytes(Path(path), payload)


def read_nifti(path: Path) -> np.ndarray:
    with open(path, "rb") as handle:
        raw = handle.read()
    if len(raw) < 352:
        raise DatasetError(f"{path}: truncated NIfTI file")
    (size,) = struct.unpack_from("<i", raw, 0)
    if size != 348 or raw[344:348] not in (_NIFTI_MAGIC, b"ni1\x00"):
        raise DatasetError(f"{path}: not a NIfTI-1 file")
    dim = struct.unpack_from("<8h", raw, 40)
    (datatype,) = struct.unpack_from("<h", raw, 70)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    ndim = dim[0]
    extents = [int(d) for d in dim[1 : 1 + ndim]]
    dtype_map = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64, 512: np.uint16}
    if datatype not in dtype_map:
        raise DatasetError(f"{path}: unsupported NIfTI datatype {datatype}")
    count = int(np.prod(extents))
    flat = np.frombuffer(raw, dtype=dtype_map[datatype], count=count, offset=int(vox_offset))
    volume = flat.reshape(extents, order="F").astype(np.float32)
    # interpret trailing non-spatial axis as channels when rank exceeds 3
    if ndim == 4:
        rank = 3
        channels_last = volume
    else:
        rank = ndim
        channels_last = volume[..., None]
    channels_last = channels_last.transpose(tuple(reversed(range(rank))) + (rank,))
    return np.moveaxis(channels_last, -1, 0)


# ---------------------------------------------------------------------------
# high-level tensor I/O


def load_image(path: Path) -> NdImage:
    path = Path(path)
    if path.suffix in PNG_EXTENSIONS:
        return NdImage(read_png(path).astype(np.float32))
    if path.suffix in NIFTI_EXTENSIONS:
        return NdImage(read_nifti(path))
    raise DatasetError(f"unsupported image extension: {path.name}")


def save_generated_image(path: Path, img: NdImage, file_format: str) -> dict | None:
    """Persist a float tensor; PNG outputs are quantised and report the
    (min, scale) needed to reconstruct values."""
    path = Path(path)
    if file_format == "nifti":
        write_nifti(path, img.data)
        return None
    if img.channels == 1:
        codes, minimum, scale = quantize(img.data, 65535)
        write_png(path, codes.astype(np.uint16))
    else:
        codes, minimum, scale = quantize(img.data, 255)
        write_png(path, codes.astype(np.uint8))
    return {"min": minimum, "scale": scale}


def load_generated_image(path: Path, quant: dict | None) -> NdImage:
    path = Path(path)
    if path.suffix in NIFTI_EXTENSIONS:
        return NdImage(read_nifti(path))
    codes = read_png(path)
    if quant is None:
        return NdImage(codes.astype(np.float32))
    return NdImage(dequantize(codes, quant["min"], quant["scale"]))


def save_label_map(path: Path, values: np.ndarray, file_format: str) -> dict | None:
    path = Path(path)
    if file_format == "nifti":
        write_nifti(path, values[None].astype(np.float32))
        return None
    codes = np.round(values.astype(np.float64) / LABEL_SCALE)
    write_png(path, np.clip(codes, 0, 65535).astype(np.uint16)[None])
    return {"scale": LABEL_SCALE}


def load_label_map(path: Path) -> np.ndarray:
    path = Path(path)
    if path.suffix in NIFTI_EXTENSIONS:
        return read_nifti(path)[0]
    codes = read_png(path)[0]
    return (codes.astype(np.float32) * np.float32(LABEL_SCALE)).astype(np.float32)


def load_score_map(path: Path) -> np.ndarray:
    """Read a stored score/label map into [0, 1] floats."""
    path = Path(path)
    if path.suffix in NIFTI_EXTENSIONS:
        return read_nifti(path)[0]
    codes = read_png(path)
    plane = codes.astype(np.float32).mean(axis=0) if codes.shape[0] > 1 else codes[0].astype(np.float32)
    peak = 65535.0 if codes.dtype == np.uint16 else 255.0
    return (plane / np.float32(peak)).astype(np.float32)


def rasterize_boxes(boxes: list, shape: tuple[int, ...]) -> np.ndarray:
    """Fill a binary mask from a list of {origin, extent} boxes."""
    mask = np.zeros(shape, dtype=bool)
    for box in boxes:
        origin = [int(v) for v in box["origin"]]
        extent = [int(v) for v in box["extent"]]
        if len(origin) != len(shape) or len(extent) != len(shape):
            raise ValueError(f"box rank does not match image rank {len(shape)}")
        window = tuple(
            slice(max(0, o), min(d, o + e)) for o, e, d in zip(origin, extent, shape)
        )
        mask[window] = True
    return mask
