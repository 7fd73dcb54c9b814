"""Exception hierarchy.

Errors are grouped by how the CLI reports them: configuration problems,
bad input data, and failures at run time (non-convergence, infeasibility).
"""

from __future__ import annotations


class RocerfError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(RocerfError):
    """Invalid configuration or precondition supplied by the caller."""


class DataError(RocerfError):
    """Input data is missing, malformed, or unusable."""


class RuntimeFailure(RocerfError):
    """A numerical procedure failed to reach its goal."""


# data ---------------------------------------------------------------------


class MissingFile(DataError):
    def __init__(self, path):
        super().__init__(f"file not found: {path}")
        self.path = str(path)


class SchemaMismatch(DataError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)
        self.row = row
        self.column = column


class DegenerateLabels(DataError):
    def __init__(self, message, present_class=None):
        super().__init__(message)
        self.present_class = present_class


class EmptyTrainingSet(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class CacheFormatError(DataError):
    """Influence cache or model file failed validation (magic, version, checksum)."""


# models -------------------------------------------------------------------


class DimensionMismatch(ConfigError):
    pass


class IndexOutOfRange(ConfigError):
    pass


class SizeMismatch(ConfigError):
    pass


class KTooLarge(ConfigError):
    pass


class NonConvergence(RuntimeFailure):
    def __init__(self, message, final_norm=None):
        super().__init__(message)
        self.final_norm = final_norm


class NotPositiveDefinite(RuntimeFailure):
    pass


class CgNonConvergence(RuntimeFailure):
    def __init__(self, message, residual=None, index=None):
        super().__init__(message)
        self.residual = residual
        self.index = index


class DivergedLoss(RuntimeFailure):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


# recourse / harness -------------------------------------------------------


class NotNegativeSample(ConfigError):
    pass


class Infeasible(RuntimeFailure):
    pass


class CombinatoricsTooLarge(ConfigError):
    pass


class UnpairedResults(ConfigError):
    pass


def exit_code_for(exc: BaseException) -> int:
    """Map an exception onto the documented CLI exit codes."""
    if isinstance(exc, ConfigError):
        return 1
    if isinstance(exc, DataError):
        return 2
    return 3
