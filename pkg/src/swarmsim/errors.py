"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, TraceError -> 2,
InvariantError -> 3.
"""


class SwarmsimError(Exception):
    """Base class for all package errors."""


class ConfigError(SwarmsimError):
    """Invalid configuration, flags, or policy parameters."""


class TraceError(SwarmsimError):
    """Malformed or inconsistent trace input."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyRecordError(SwarmsimError):
    """Dispersion is undefined for a record with zero retrieved mass."""


class InvariantError(SwarmsimError):
    """A protocol invariant was violated during a simulation run."""
