"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation's contract."""


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


class EncodingError(ValueError):
    """A symbol index cannot be mapped onto the constellation."""


class NumericError(ArithmeticError):
    """Non-finite or degenerate numeric input."""


class ParseError(ValueError):
    """Malformed input file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int = -1):
        super().__init__(f"{message} (byte offset {offset})" if offset >= 0 else message)
        self.offset = offset


class CheckpointError(ValueError):
    """Checkpoint cannot be loaded (corruption, version mismatch)."""
