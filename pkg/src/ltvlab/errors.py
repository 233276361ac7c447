"""Exception hierarchy shared across the package.

The CLI maps each family to its own exit status.
"""


class LTVLabError(Exception):
    """Base class for all package errors."""


class ConfigError(LTVLabError, ValueError):
    """Invalid configuration value or unreadable configuration file."""


class DataError(LTVLabError, ValueError):
    """Malformed dataset, checkpoint or prediction file, or invalid records."""


class NumericError(LTVLabError, ArithmeticError):
    """Non-finite loss or gradient encountered during optimization."""
