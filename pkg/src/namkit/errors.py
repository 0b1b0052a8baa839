"""Exception hierarchy shared across the package.

Exit codes used by the CLI: 2 for usage errors, 3 for data errors,
4 for numeric failures.
"""


class NamkitError(Exception):
    """Base class for all namkit errors."""

    exit_code = 1


class UsageError(NamkitError):
    """API misuse: bad arguments, wrong call order, missing state."""

    exit_code = 2


class ConfigError(UsageError):
    """Invalid model or training configuration."""


class DimensionError(UsageError):
    """Array shapes do not agree with the operation's contract."""


class DataError(NamkitError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class UndefinedMetricError(DataError):
    """The requested metric is undefined on the given data."""


class NumericError(NamkitError):
    """Non-finite values where finite ones are required."""

    exit_code = 4
