"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """An argument violates an operation's precondition."""


class OutOfCoverageError(InvalidInputError):
    """A query position lies outside the receiver grid coverage."""


class SingularFitError(InvalidInputError):
    """A least-squares fit has no unique solution."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. zero-energy reference)."""


class ConfigError(ValueError):
    """A scenario or scene document failed to load or validate."""
