"""Exception hierarchy for the re-ranking engine."""

from __future__ import annotations


class HyQEError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HyQEError, ValueError):
    """Two embeddings that must share a dimension do not."""


class ZeroNormError(HyQEError, ValueError):
    """A zero vector was passed where cosine similarity needs a direction."""


class InvalidInputError(HyQEError, ValueError):
    pass


class ProviderError(HyQEError):
    """A generator or embedder call failed.

    ``retryable`` tells the retry loop whether another attempt can help
    (timeouts, 429 and 5xx responses) or not (4xx, malformed bodies).
    """

    def __init__(self, message: str, *, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class WindowExceededError(HyQEError):
    """The prompt plus reserved output does not fit the generator window."""

    def __init__(self, needed: int, window: int):
        super().__init__(f"prompt needs {needed} tokens but the window is {window}")
        self.needed = needed
        self.window = window


class CorruptRecordError(HyQEError):
    def __init__(self, key, reason: str):
        super().__init__(f"corrupt cache record for {key}: {reason}")
        self.key = key


class ParseError(HyQEError, ValueError):
    """A data file line could not be parsed. ``line_no`` is 1-based."""

    def __init__(self, message: str, line_no: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_no is not None:
            where += f"{line_no}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")
        self.line_no = line_no
        self.path = path


class DuplicateIdError(ParseError):
    pass


class EmptyEvaluationError(HyQEError):
    """The run and the qrels share no query ids."""
