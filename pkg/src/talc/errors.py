"""Exception types shared across the package."""


class TalcError(Exception):
    """Base class for all package errors."""


class ShapeError(TalcError, ValueError):
    pass


class NumericError(TalcError, ArithmeticError):
    pass


class ConfigError(TalcError, ValueError):
    pass


class UsageError(TalcError, ValueError):
    pass


class SpecError(TalcError, ValueError):
    """A synthetic video spec cannot be rendered as requested."""


class TransportError(TalcError, RuntimeError):
    pass


class ParseError(TalcError, ValueError):
    """A remote model reply could not be parsed. ``raw`` keeps the reply text."""

    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw
