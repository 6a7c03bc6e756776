class StereoliftError(Exception):
    """Base class for stereolift errors."""
    exit_code: int = 1


class ConfigError(StereoliftError):
    """Raised when settings or CLI usage are invalid."""
    exit_code = 2


class DataError(StereoliftError):
    """Raised when input data cannot be used."""
    exit_code = 3


class IngestionError(DataError):
    """Raised when a manifest entry is missing, unreadable or corrupt."""

    def __init__(self, message: str, path: str = ""):
        self.path = str(path)
        super().__init__(f"{message}: {self.path}" if self.path else message)


class DimensionMismatchError(DataError, ValueError):
    """Raised when rasters, fields or feature vectors disagree in shape."""
    pass


class EmptyDatabaseError(DataError):
    """Raised when retrieval or prior estimation has nothing to work with."""
    pass


class ResourceLimitError(StereoliftError):
    """Raised when a solve would not fit in available memory."""
    exit_code = 3


class SolverError(StereoliftError):
    """Raised when the sparse solver cannot proceed."""
    exit_code = 4


class NonConvergenceError(SolverError):
    """Raised in strict mode when a solve ends without converging."""
    pass
