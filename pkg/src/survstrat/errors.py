"""Exception taxonomy shared across the package.

Each class maps to one CLI exit code: usage/config -> 1, data -> 2,
numeric -> 3.
"""


class SurvstratError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(SurvstratError):
    """API misuse: bad argument values, wrong call order, missing files."""

    exit_code = 1


class ConfigurationError(SurvstratError):
    """Invalid configuration: incompatible shapes, flags, or weights."""

    exit_code = 1


class DataError(SurvstratError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericError(SurvstratError):
    """Non-finite values or numeric breakdown during computation."""

    exit_code = 3
