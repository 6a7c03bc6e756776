import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from sqlmodel import Session, delete, select

from ..engine.errors import DimensionMismatchError, EmptyDatabaseError, IngestionError
from ..engine.executor import FrameExecutor
from ..features.flow import FlowBlockFeatures, clip_flow_features
from ..features.gist import GistDescriptor, compute_gist
from ..features.matching import matching_score
from ..imaging.io import read_depth, read_image
from ..imaging.raster import DepthMap, Raster, resize_bilinear, resize_depth
from ..models import DepthDomain, ManifestClip
from .cache import cache_path, file_content_hash, read_record, write_record
from .store import IndexMeta, RecordRow, create_db_and_tables, index_engine

logger = logging.getLogger("Stereolift.Database")

FEATURES_DIR = "features"


class RgbdRecord(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    image: Raster
    depth: DepthMap
    clip_id: str
    frame_index: int = Field(ge=0)
    gist: GistDescriptor
    flowfeat: FlowBlockFeatures
    content_hash: str = ""
    image_path: str = ""
    depth_path: Optional[str] = None

    @model_validator(mode="after")
    def check_dims(self) -> "RgbdRecord":
        if self.image.shape != self.depth.shape:
            raise ValueError(f"image {self.image.shape} and depth {self.depth.shape} differ at working resolution")
        return self

    @property
    def sort_key(self) -> Tuple[str, int]:
        return self.clip_id, self.frame_index


class DatabaseIndex(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    records: List[RgbdRecord]
    working_resolution: Tuple[int, int]  # (width, height)
    prior: DepthMap
    domain: DepthDomain = DepthDomain.LOG

    @model_validator(mode="after")
    def check_prior(self) -> "DatabaseIndex":
        w, h = self.working_resolution
        if self.prior.shape != (h, w):
            raise ValueError(f"prior {self.prior.shape} does not match working resolution {w}x{h}")
        return self

    @property
    def clip_ids(self) -> List[str]:
        return sorted({r.clip_id for r in self.records})

    def record(self, clip_id: str, frame_index: int) -> RgbdRecord:
        for r in self.records:
            if r.clip_id == clip_id and r.frame_index == frame_index:
                return r
        raise KeyError(f"{clip_id}#{frame_index}")


class Candidate(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    record: RgbdRecord
    score: float


class CandidateSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    candidates: List[Candidate]
    k: int
    shortfall: bool = False

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def scores(self) -> List[float]:
        return [c.score for c in self.candidates]

    @property
    def records(self) -> List[RgbdRecord]:
        return [c.record for c in self.candidates]


# --- Retrieval ---

def select_candidates(
    index: DatabaseIndex,
    gist: GistDescriptor,
    flowfeat: FlowBlockFeatures,
    k: int,
    omega: float = 0.5,
    exclude_clip: Optional[str] = None,
) -> CandidateSet:
    """Top-K records by matching score, at most one per clip."""
    if k < 1:
        raise ValueError("K must be >= 1")
    pool = [r for r in index.records if r.clip_id != exclude_clip]
    if not pool:
        raise EmptyDatabaseError("no database records available for retrieval")

    scored = sorted(
        ((matching_score(gist, flowfeat, r.gist, r.flowfeat, omega), r) for r in pool),
        key=lambda sr: (sr[0], sr[1].clip_id, sr[1].frame_index),
    )
    chosen: List[Candidate] = []
    seen = set()
    for score, record in scored:
        if record.clip_id in seen:
            continue
        seen.add(record.clip_id)
        chosen.append(Candidate(record=record, score=score))
        if len(chosen) == k:
            break

    shortfall = len(chosen) < k
    if shortfall:
        logger.warning(f"Only {len(chosen)} clips available for K={k}; returning all of them")
    return CandidateSet(candidates=chosen, k=k, shortfall=shortfall)


# --- Prior ---

def compute_prior(records: Union[DatabaseIndex, Sequence[RgbdRecord]], domain: Optional[DepthDomain] = None) -> DepthMap:
    """
    Per-pixel mean of valid depth across records, averaged in the
    optimisation domain. Pixels with no sample take the global mean.
    """
    if isinstance(records, DatabaseIndex):
        domain = domain or records.domain
        records = records.records
    domain = domain or DepthDomain.LINEAR
    if not records:
        raise EmptyDatabaseError("cannot compute a prior from an empty database")

    shape = records[0].depth.shape
    total = np.zeros(shape)
    count = np.zeros(shape)
    for r in records:
        if r.depth.shape != shape:
            raise DimensionMismatchError("records differ in working resolution")
        values = np.where(r.depth.valid, r.depth.values, 1.0)
        if domain == DepthDomain.LOG:
            values = np.log10(values)
        total += np.where(r.depth.valid, values, 0.0)
        count += r.depth.valid

    if not count.any():
        raise EmptyDatabaseError("no valid depth anywhere in the database")
    global_mean = total.sum() / count.sum()
    mean = np.where(count > 0, total / np.maximum(count, 1), global_mean)
    if domain == DepthDomain.LOG:
        mean = np.power(10.0, mean)
    return DepthMap.from_array(mean, np.ones(shape, dtype=bool))


# --- Ingestion ---

def read_manifest(manifest_path: Path) -> List[ManifestClip]:
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text())
    except FileNotFoundError as e:
        raise IngestionError("manifest not found", manifest_path) from e
    except (OSError, json.JSONDecodeError) as e:
        raise IngestionError(f"manifest unreadable ({e})", manifest_path) from e
    if not isinstance(raw, list):
        raise IngestionError("manifest must be a JSON list of clips", manifest_path)
    try:
        clips = [ManifestClip(**c) for c in raw]
    except (TypeError, ValidationError) as e:
        raise IngestionError(f"manifest entry invalid ({e})", manifest_path) from e
    if not clips:
        raise IngestionError("manifest is empty", manifest_path)
    ids = [c.clip_id for c in clips]
    if len(set(ids)) != len(ids):
        raise IngestionError("manifest has duplicate clip_id values", manifest_path)
    return clips


def _resolve(base: Path, p: Optional[str]) -> Optional[Path]:
    if p is None:
        return None
    path = Path(p)
    return path if path.is_absolute() else base / path


def _load_frame(image_path: Path, depth_path: Optional[Path], width: int, height: int) -> Tuple[Raster, Optional[DepthMap]]:
    if not image_path.exists():
        raise IngestionError("missing image", image_path)
    image = read_image(image_path)
    depth = None
    if depth_path is not None:
        if not depth_path.exists():
            raise IngestionError("missing depth", depth_path)
        depth = read_depth(depth_path)
        if depth.shape != image.shape:
            raise IngestionError(f"depth {depth.shape} does not match image {image.shape}", depth_path)
        depth = resize_depth(depth, width, height)
    return resize_bilinear(image, width, height, anti_alias=True), depth


def _ingest_clip(clip: ManifestClip, base: Path, cache_dir: Path, width: int, height: int, blocks: int, gist_size: int) -> List[RgbdRecord]:
    paths = [(_resolve(base, f.image), _resolve(base, f.depth)) for f in clip.frames]
    for image_path, depth_path in paths:
        if not image_path.exists():
            raise IngestionError("missing image", image_path)
        if depth_path is not None and not depth_path.exists():
            raise IngestionError("missing depth", depth_path)

    salt = f"{width}x{height}:b{blocks}:g{gist_size}"
    keys = []
    for i, (image_path, depth_path) in enumerate(paths):
        nxt = paths[i + 1][0] if i + 1 < len(paths) else None
        keys.append(file_content_hash([image_path, depth_path, nxt], salt=salt))

    cached = [read_record(cache_path(cache_dir, key)) if cache_path(cache_dir, key).exists() else None for key in keys]
    if all(c is not None or p[1] is None for c, p in zip(cached, paths)):
        logger.info(f"Clip '{clip.clip_id}': feature cache hit for all {len(paths)} frames")
    else:
        frames = [_load_frame(ip, dp, width, height) for ip, dp in paths]
        flowfeats = clip_flow_features([img for img, _ in frames], blocks)
        for i, ((image, depth), ff) in enumerate(zip(frames, flowfeats)):
            if depth is None:
                continue
            arrays = {
                "gist": compute_gist(image, size=gist_size).values,
                "flowfeat": ff.values,
                "image": image.data,
                "depth": depth.values,
                "valid": depth.valid,
            }
            write_record(cache_path(cache_dir, keys[i]), arrays)
            cached[i] = arrays

    records = []
    for i, ((image_path, depth_path), arrays) in enumerate(zip(paths, cached)):
        if depth_path is None:
            continue  # motion context only
        records.append(_record_from_arrays(arrays, clip.clip_id, i, keys[i], image_path, depth_path, blocks))
    return records


def _record_from_arrays(arrays, clip_id: str, frame_index: int, key: str, image_path, depth_path, blocks: int) -> RgbdRecord:
    return RgbdRecord(
        image=Raster(data=arrays["image"]),
        depth=DepthMap.from_array(arrays["depth"], arrays["valid"]),
        clip_id=clip_id,
        frame_index=frame_index,
        gist=GistDescriptor(values=arrays["gist"]),
        flowfeat=FlowBlockFeatures(values=arrays["flowfeat"], b=blocks),
        content_hash=key,
        image_path=str(image_path),
        depth_path=str(depth_path) if depth_path is not None else None,
    )


def ingest_manifest(
    manifest_path: Union[str, Path],
    index_dir: Union[str, Path],
    working_resolution: Tuple[int, int] = (160, 120),
    domain: DepthDomain = DepthDomain.LOG,
    blocks: int = 4,
    gist_size: int = 128,
    executor: Optional[FrameExecutor] = None,
) -> DatabaseIndex:
    """
    Read every clip of the manifest at working resolution, compute or
    reuse cached features, compute the prior and persist the index.
    Depth holes stay marked invalid.
    """
    manifest_path = Path(manifest_path)
    index_dir = Path(index_dir)
    clips = read_manifest(manifest_path)
    width, height = working_resolution
    cache_dir = index_dir / FEATURES_DIR
    cache_dir.mkdir(parents=True, exist_ok=True)
    base = manifest_path.parent

    executor = executor or FrameExecutor(max_concurrent=1)
    per_clip = executor.map(
        lambda clip: _ingest_clip(clip, base, cache_dir, width, height, blocks, gist_size),
        clips,
        label="ingest",
    )
    records = [r for clip_records in per_clip for r in clip_records]
    if not records:
        raise IngestionError("manifest lists no frames with depth", manifest_path)

    index = DatabaseIndex(
        records=records,
        working_resolution=(width, height),
        prior=compute_prior(records, domain),
        domain=domain,
    )
    save_index(index, index_dir, settings={"blocks": blocks, "gist_size": gist_size})
    logger.info(f"✅ Indexed {len(records)} frames from {len(index.clip_ids)} clips into {index_dir}")
    return index


# --- Persistence ---

def save_index(index: DatabaseIndex, index_dir: Union[str, Path], settings: Optional[dict] = None) -> Path:
    index_dir = Path(index_dir)
    engine = index_engine(index_dir)
    create_db_and_tables(engine)
    cache_dir = index_dir / FEATURES_DIR
    w, h = index.working_resolution
    with Session(engine) as session:
        session.exec(delete(RecordRow))
        session.exec(delete(IndexMeta))
        session.add(IndexMeta(working_width=w, working_height=h, domain=index.domain.value, settings=settings or {}))
        for r in index.records:
            path = cache_path(cache_dir, r.content_hash)
            if not path.exists():
                write_record(path, {
                    "gist": r.gist.values,
                    "flowfeat": r.flowfeat.values,
                    "image": r.image.data,
                    "depth": r.depth.values,
                    "valid": r.depth.valid,
                })
            session.add(RecordRow(
                clip_id=r.clip_id,
                frame_index=r.frame_index,
                image_path=r.image_path,
                depth_path=r.depth_path,
                content_hash=r.content_hash,
            ))
        session.commit()
    engine.dispose()
    return index_dir


def load_index(index_dir: Union[str, Path]) -> DatabaseIndex:
    index_dir = Path(index_dir)
    if not (index_dir / "index.db").exists():
        raise IngestionError("no index descriptor found", index_dir)
    engine = index_engine(index_dir)
    with Session(engine) as session:
        meta = session.exec(select(IndexMeta)).first()
        rows = session.exec(select(RecordRow).order_by(RecordRow.clip_id, RecordRow.frame_index)).all()
    engine.dispose()
    if meta is None or not rows:
        raise EmptyDatabaseError(f"index at {index_dir} is empty")

    blocks = int((meta.settings or {}).get("blocks", 4))
    cache_dir = index_dir / FEATURES_DIR
    records = []
    for row in rows:
        path = cache_path(cache_dir, row.content_hash)
        if not path.exists():
            raise IngestionError("feature cache file missing", path)
        records.append(_record_from_arrays(
            read_record(path), row.clip_id, row.frame_index, row.content_hash, row.image_path, row.depth_path, blocks
        ))
    domain = DepthDomain(meta.domain)
    return DatabaseIndex(
        records=records,
        working_resolution=(meta.working_width, meta.working_height),
        prior=compute_prior(records, domain),
        domain=domain,
    )


def build_index(records: Sequence[RgbdRecord], domain: DepthDomain = DepthDomain.LOG) -> DatabaseIndex:
    """In-memory index over already-featurised records."""
    if not records:
        raise EmptyDatabaseError("cannot build an index without records")
    h, w = records[0].depth.shape
    return DatabaseIndex(records=list(records), working_resolution=(w, h), prior=compute_prior(records, domain), domain=domain)
