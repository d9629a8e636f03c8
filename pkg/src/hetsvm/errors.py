"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
TuningError / CalibrationError -> 4.
"""


class HetsvmError(Exception):
    """Base class for package errors."""


class ConfigError(HetsvmError):
    """Malformed or inconsistent run configuration."""


class DataError(HetsvmError):
    """Unusable input data (missing columns, bad values, schema mismatch)."""


class DegenerateFitError(HetsvmError):
    """Fit cannot proceed, e.g. the margin active set became empty."""


class TuningError(HetsvmError):
    """Penalty search failed, e.g. every candidate was degenerate."""


class CalibrationError(HetsvmError):
    """Simulation affine calibration failed to reach its targets."""


class NotEstimableError(HetsvmError):
    """Requested effect refers to a treatment absent from the design."""
