from .index import (
    RgbdRecord,
    DatabaseIndex,
    Candidate,
    CandidateSet,
    select_candidates,
    compute_prior,
    read_manifest,
    ingest_manifest,
    save_index,
    load_index,
    build_index,
)

__all__ = [
    "RgbdRecord",
    "DatabaseIndex",
    "Candidate",
    "CandidateSet",
    "select_candidates",
    "compute_prior",
    "read_manifest",
    "ingest_manifest",
    "save_index",
    "load_index",
    "build_index",
]
