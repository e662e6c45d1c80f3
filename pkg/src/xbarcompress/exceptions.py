"""Exception types raised across the package."""


class XbarError(Exception):
    """Base class for all package errors."""


class ShapeError(XbarError, ValueError):
    """Array dimensions are incompatible with the requested operation."""


class NumericError(XbarError, ArithmeticError):
    """A non-finite value appeared in data, activations, or updates."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class UsageError(XbarError, ValueError):
    """An argument is outside its documented domain."""


class StateError(XbarError, RuntimeError):
    """Cached state no longer matches the object it was computed from."""


class FormatError(XbarError, ValueError):
    """A binary file does not follow its declared format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
