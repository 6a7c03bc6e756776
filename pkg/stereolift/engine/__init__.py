from .errors import (
    StereoliftError,
    ConfigError,
    DataError,
    IngestionError,
    DimensionMismatchError,
    EmptyDatabaseError,
    ResourceLimitError,
    SolverError,
    NonConvergenceError,
)
from .executor import FrameExecutor

__all__ = [
    "StereoliftError",
    "ConfigError",
    "DataError",
    "IngestionError",
    "DimensionMismatchError",
    "EmptyDatabaseError",
    "ResourceLimitError",
    "SolverError",
    "NonConvergenceError",
    "FrameExecutor",
]
