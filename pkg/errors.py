"""Exception hierarchy shared by every module.

Library code raises these; only cli.py turns them into exit codes.
"""

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4


class HBError(Exception):
    exit_code = EXIT_INPUT


class PreconditionError(HBError, ValueError):
    """An argument is outside the range the operation accepts."""
    exit_code = EXIT_USAGE


class DomainError(PreconditionError):
    pass


# --- Input / parse family ---

class ParseError(HBError):
    """Malformed structure or config text. `line` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(HBError):
    pass


class AmbiguityError(HBError):
    """Two hopping rules match the same site pair at the same distance."""


class EmbeddingError(HBError):
    """The lattice graph is not planar as drawn."""


class SizeError(HBError):
    pass


class OutputError(HBError):
    """An output file or directory cannot be written."""


# --- Numeric family ---

class NumericError(HBError):
    exit_code = EXIT_NUMERIC


class BoundsError(NumericError):
    """Spectral bounds do not contain the spectrum."""


class DegenerateError(NumericError):
    pass


class CenteringError(NumericError):
    pass


class InsufficientRangeError(NumericError):
    pass
