"""Exception hierarchy for the forecasting engine.

Every class carries the process exit code the CLI returns when it surfaces
uncaught: 2 for configuration problems, 3 for data/file problems, 4 for
failures inside the model or the training loop.
"""

from __future__ import annotations


class SrnnError(RuntimeError):
    exit_code = 1


class ConfigError(SrnnError, ValueError):
    exit_code = 2


class DataError(SrnnError):
    exit_code = 3


class ParseError(DataError):
    """Malformed adjacency file."""


class FormatError(DataError):
    """Malformed speeds CSV or prepared-dataset cache."""


class ValidationError(DataError):
    """Duplicate or overlapping segment ids."""


class SegmentLookupError(DataError, LookupError):
    pass


class DegenerateDataError(DataError):
    pass


class CheckpointError(DataError):
    pass


class MetricError(DataError):
    pass


class ModelError(SrnnError):
    exit_code = 4


class DimensionError(ModelError, ValueError):
    pass


class RowIndexError(ModelError, IndexError):
    pass


class ContractError(ModelError):
    pass


class BindingError(ModelError):
    pass


class TrainingDivergedError(ModelError):
    pass
