"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code so failures surface with a stable,
scriptable status.
"""


class CtsdgError(Exception):
    """Base class; exit_code consumed by the CLI dispatcher."""

    exit_code = 1


class UsageError(CtsdgError):
    exit_code = 2


class DataError(CtsdgError):
    """Malformed or insufficient input data."""

    exit_code = 3


class ConfigError(CtsdgError):
    exit_code = 3


class GeometryError(DataError):
    """Reference paths that do not admit the requested construction."""


class GenerationError(DataError):
    """Synthetic sample could not be produced within the retry budget."""


class NumericError(CtsdgError):
    """Non-finite values or invalid numeric domains."""

    exit_code = 4


class DimensionError(NumericError):
    """Array shape mismatch."""


class OutputError(CtsdgError):
    """Filesystem write failure."""

    exit_code = 5
