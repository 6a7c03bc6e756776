"""
Binary feature cache, one file per record keyed by content hash.

Layout (little-endian): magic "SLFC", u16 version, u16 array count, then
per array: u8 dtype code, u8 ndim, u32 dims[ndim], raw bytes.
"""
import hashlib
import logging
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np

from ..engine.errors import DataError

logger = logging.getLogger("Stereolift.Database.Cache")

MAGIC = b"SLFC"
VERSION = 1
CACHE_SUFFIX = ".slfc"
ARRAY_NAMES = ("gist", "flowfeat", "image", "depth", "valid")

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


def content_hash(*blobs: bytes) -> str:
    h = hashlib.sha256()
    for blob in blobs:
        h.update(hashlib.sha256(blob).digest())
    return h.hexdigest()


def file_content_hash(paths: Iterable[Optional[Path]], salt: str = "") -> str:
    blobs: List[bytes] = [salt.encode("utf-8")]
    for p in paths:
        blobs.append(Path(p).read_bytes() if p is not None else b"")
    return content_hash(*blobs)


def cache_path(cache_dir: Path, key: str) -> Path:
    return Path(cache_dir) / f"{key}{CACHE_SUFFIX}"


def write_record(path: Path, arrays: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<HH", VERSION, len(ARRAY_NAMES))]
    for name in ARRAY_NAMES:
        arr = np.asarray(arrays[name])
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        elif arr.dtype not in _CODES:
            arr = arr.astype("<f8")
        chunks.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


def read_record(path: Path) -> Dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"feature cache has bad magic: {path}")
    version, count = struct.unpack_from("<HH", raw, 4)
    if version != VERSION:
        raise DataError(f"feature cache version {version} unsupported: {path}")
    offset = 8
    arrays = {}
    try:
        for name in ARRAY_NAMES[:count]:
            code, ndim = struct.unpack_from("<BB", raw, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            dtype = _DTYPES[code]
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(raw, dtype=dtype, count=n, offset=offset).reshape(shape)
            offset += n * dtype.itemsize
            arrays[name] = arr.astype(bool) if name == "valid" else arr.astype(np.float64)
    except (struct.error, KeyError, ValueError) as e:
        raise DataError(f"feature cache truncated or corrupt: {path} ({e})") from e
    return arrays
