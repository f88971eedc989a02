"""Exception hierarchy shared by every fixsearch module."""


class FixSearchError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class InvalidInputError(FixSearchError, ValueError):
    pass


class DegenerateInputError(InvalidInputError):
    """Raised when a metric is undefined for the given input (e.g. a constant map)."""


class ParseError(FixSearchError, ValueError):
    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class ValidationError(FixSearchError, ValueError):
    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"record {index}: {message}")
        self.index = index


class FormatError(FixSearchError, ValueError):
    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} at offset {offset}")
        self.offset = offset


class ConfigError(FixSearchError, ValueError):
    pass


class ShapeError(FixSearchError, ValueError):
    pass


class UsageError(FixSearchError, RuntimeError):
    pass
