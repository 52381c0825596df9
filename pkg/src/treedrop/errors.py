"""Exception types shared across the package."""


class TreedropError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(TreedropError):
    """Malformed canonical text. Carries the character offset of the problem."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos
        self.reason = message


class PreconditionError(TreedropError):
    """An operation was called with arguments that violate its contract."""
