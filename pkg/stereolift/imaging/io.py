import logging
import re
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from tenacity import retry, retry_if_exception, stop_after_attempt, wait_exponential

from ..engine.errors import IngestionError
from .raster import DepthMap, Raster

logger = logging.getLogger("Stereolift.IO")

PathLike = Union[str, Path]

VIS_NEAR_M = 1.0
VIS_FAR_M = 80.0


def _is_transient(exc: BaseException) -> bool:
    return isinstance(exc, OSError) and not isinstance(
        exc, (FileNotFoundError, IsADirectoryError, PermissionError, UnidentifiedImageError)
    )


_read_retry = retry(
    retry=retry_if_exception(_is_transient),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=1),
    reraise=True,
)


@_read_retry
def _open_pixels(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        im.load()
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            return np.array(im, dtype=np.int64)
        if im.mode == "1":
            im = im.convert("L")
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        return np.array(im)


@_read_retry
def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


# --- Images ---

def read_image(path: PathLike) -> Raster:
    """8-bit PNG/JPEG → RGB raster in [0,1]."""
    path = Path(path)
    try:
        pixels = _open_pixels(path)
    except FileNotFoundError as e:
        raise IngestionError("image not found", path) from e
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise IngestionError(f"unreadable image ({e})", path) from e
    if pixels.ndim == 2:
        pixels = np.repeat(pixels[:, :, None], 3, axis=2)
    return Raster(data=pixels.astype(np.float64) / 255.0)


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.clip(np.round(data * 255.0), 0, 255).astype(np.uint8)


def write_image(path: PathLike, r: Raster) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = r.data[:, :, 0] if r.channels == 1 else r.data[:, :, :3]
    Image.fromarray(to_uint8(data)).save(path)
    return path


# --- PFM ---

def read_pfm(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        raw = _read_bytes(path)
    except FileNotFoundError as e:
        raise IngestionError("depth not found", path) from e
    header = re.match(rb"^(Pf|PF)\s+(\d+)\s+(\d+)\s+(-?[\d.eE+-]+)\s", raw)
    if header is None:
        raise IngestionError("corrupt PFM header", path)
    channels = 3 if header.group(1) == b"PF" else 1
    width, height = int(header.group(2)), int(header.group(3))
    scale = float(header.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    body = raw[header.end():]
    if len(body) < count * 4:
        raise IngestionError("truncated PFM payload", path)
    arr = np.frombuffer(body[: count * 4], dtype=dtype).astype(np.float64)
    arr = arr.reshape(height, width, channels)[::-1]  # stored bottom-to-top
    return arr[:, :, 0] if channels == 1 else arr


def write_pfm(path: PathLike, values: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values, dtype="<f4")
    height, width = values.shape[:2]
    with open(path, "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(values[::-1]).tobytes())
    return path


# --- Depth ---

def read_depth(path: PathLike) -> DepthMap:
    """16-bit PNG in millimetres (0 = hole) or PFM in metres."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        values = read_pfm(path)
        if values.ndim != 2:
            raise IngestionError("depth PFM must be single channel", path)
        return DepthMap.from_array(values)

    try:
        pixels = _open_pixels(path)
    except FileNotFoundError as e:
        raise IngestionError("depth not found", path) from e
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise IngestionError(f"corrupt depth file ({e})", path) from e
    if pixels.ndim != 2:
        raise IngestionError("depth PNG must be single channel 16-bit", path)
    millimetres = pixels.astype(np.float64)
    return DepthMap.from_array(millimetres / 1000.0, millimetres > 0)


def write_depth(stem: PathLike, depth: DepthMap) -> tuple:
    """Writes ``<stem>.pfm`` (metres, holes as 0) and ``<stem>.png`` (uint16 mm)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    values = np.where(depth.valid, depth.values, 0.0)
    pfm_path = write_pfm(stem.with_suffix(".pfm"), values)

    mm = np.clip(np.round(values * 1000.0), 0, 65535).astype(np.uint16)
    png_path = stem.with_suffix(".png")
    Image.fromarray(mm).save(png_path)
    return pfm_path, png_path


def depth_visualization(depth: DepthMap) -> np.ndarray:
    values = np.clip(np.where(depth.valid, depth.values, VIS_NEAR_M), VIS_NEAR_M, VIS_FAR_M)
    t = np.log(values / VIS_NEAR_M) / np.log(VIS_FAR_M / VIS_NEAR_M)
    out = np.round(t * 255.0).astype(np.uint8)
    out[~depth.valid] = 0
    return out


def write_depth_visualization(path: PathLike, depth: DepthMap) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(depth_visualization(depth)).save(path)
    return path


# --- Masks ---

def write_mask(path: PathLike, mask: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path)
    return path


def read_mask(path: PathLike) -> np.ndarray:
    return np.asarray(_open_pixels(Path(path))) > 0
