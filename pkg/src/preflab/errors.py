"""Shared exception types.

Four failure categories cover the whole package: bad configuration, bad
call arguments, calls that are illegal in the current state, and
unreadable files.
"""


class ConfigurationError(ValueError):
    """Raised when a config value or combination is invalid."""


class InputError(ValueError):
    """Raised when an argument violates an operation's contract."""


class StateError(RuntimeError):
    """Raised when an operation is invalid in the current state."""


class FormatError(ValueError):
    """Raised on malformed serialized data; carries the offending line."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
