"""Digital-twin channel prediction and resource allocation for industrial wireless links."""
from .exceptions import (
    ConfigError,
    InvalidInputError,
    OutOfCoverageError,
    SingularFitError,
    UndefinedMetricError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "InvalidInputError",
    "OutOfCoverageError",
    "SingularFitError",
    "UndefinedMetricError",
    "__version__",
]
