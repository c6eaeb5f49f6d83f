"""Shared exception types.

Each maps to a CLI exit code: ConfigError/UsageError -> 1, FormatError -> 2,
everything numeric (ContractViolation, DomainError, TrainingFault and the
geometry errors) -> 3.
"""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class DomainError(ValueError):
    """A value is outside the mathematical domain of an operation."""


class TrainingFault(RuntimeError):
    """A non-finite value appeared during training; message names the culprit."""


class FormatError(ValueError):
    """A data file does not match its declared format; message carries the location."""


class DegenerateMetricError(ValueError):
    """Metric tensor too close to singular for the requested statistic."""


class GraphConnectivityError(RuntimeError):
    """The geodesic graph does not connect the queried points."""


class UnsupportedDimensionError(ValueError):
    """Operation defined only for planar (2-D) latent spaces."""


class ConfigError(ValueError):
    """A run configuration is malformed (unknown key, bad value)."""


class UsageError(ValueError):
    """Bad command-line usage."""
