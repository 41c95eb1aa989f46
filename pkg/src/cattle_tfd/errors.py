"""Exception hierarchy shared across the pipeline."""


class CattleTfdError(Exception):
    """Base class for all package errors."""


class ValidationError(CattleTfdError, ValueError):
    """Input violates a documented precondition."""


class ParseError(ValidationError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDatasetError(ValidationError):
    pass


class DegenerateChannelError(ValidationError):
    """A channel is constant over the fitting data so min-max scaling is undefined."""

    def __init__(self, channel):
        self.channel = channel
        super().__init__(f"channel {channel!r} is constant (max == min)")
