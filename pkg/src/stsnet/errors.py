"""Exception types shared across the package."""


class STSError(Exception):
    """Base class for all errors raised by stsnet."""


class DimensionError(STSError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(STSError, ValueError):
    """An operator or model was configured with impossible settings."""


class StateError(STSError, RuntimeError):
    """An object was used before it reached the required state."""


class InputError(STSError, ValueError):
    """User supplied data violates a precondition."""


class ParseError(InputError):
    """A dataset or config file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
