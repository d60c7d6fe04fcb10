"""Exception hierarchy. The CLI maps these onto exit codes."""


class TokenCompactError(Exception):
    exit_code = 4


class ConfigError(TokenCompactError, ValueError):
    exit_code = 2


class DataError(TokenCompactError, ValueError):
    exit_code = 3


class ShapeError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StageError(TokenCompactError):
    """Wraps a failure with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        # unreadable inputs are data problems, anything else unexpected is internal
        default = DataError.exit_code if isinstance(cause, OSError) else 4
        self.exit_code = getattr(cause, "exit_code", default)
