"""Bug-report dialog identification and bug-report synthesis from developer chat.

Pipeline: normalize a chat export (``corpus``), split it into dialogs
(``disentangler``), classify dialogs as bug reports (``bri_model``) and turn
the reporter's sentences into a structured report (``brs_model``).
"""

from .errors import (
    BugListenerError,
    CheckpointNotFoundError,
    ConfigError,
    InsufficientContentError,
    ParseError,
    SchemaError,
    ShapeError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "BugListenerError",
    "CheckpointNotFoundError",
    "ConfigError",
    "InsufficientContentError",
    "ParseError",
    "SchemaError",
    "ShapeError",
    "ValidationError",
    "__version__",
]
