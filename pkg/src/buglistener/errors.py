"""Exception hierarchy. The CLI maps each class to a distinct error record."""


class BugListenerError(Exception):
    code = "error"


class ParseError(BugListenerError):
    code = "parse_error"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(BugListenerError, ValueError):
    code = "validation_error"


class ShapeError(BugListenerError, ValueError):
    code = "shape_error"


class ConfigError(BugListenerError):
    code = "config_error"


class SchemaError(BugListenerError):
    code = "schema_mismatch"


class CheckpointNotFoundError(BugListenerError, FileNotFoundError):
    code = "checkpoint_not_found"


class InsufficientContentError(BugListenerError):
    code = "insufficient_content"
