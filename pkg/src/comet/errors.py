"""Exception types shared across the package."""


class CometError(Exception):
    """Base class for all package errors."""


class ValidationError(CometError, ValueError):
    """Invalid argument, configuration or dimension mismatch."""


class ParseError(CometError, ValueError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class UnsupportedError(CometError):
    """Requested operation is outside what the implementation supports."""


class JobError(CometError, RuntimeError):
    """A training job failed; names the block that caused it."""
