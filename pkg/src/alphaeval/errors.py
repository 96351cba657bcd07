"""Exception hierarchy shared by all alphaeval modules."""

from __future__ import annotations


class AlphaEvalError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(AlphaEvalError, ValueError):
    """A caller-supplied parameter is outside its valid domain."""


# -- panel ingestion ---------------------------------------------------------


class PanelFormatError(AlphaEvalError):
    """Malformed panel CSV; ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateKeyError(PanelFormatError):
    pass


class UnknownFeatureError(AlphaEvalError):
    pass


class MissingFeatureError(AlphaEvalError):
    pass


# -- expression language -----------------------------------------------------


class ExprSyntaxError(AlphaEvalError):
    """Parse failure. ``span`` is a ``(start, end)`` character range into the source."""

    def __init__(self, message: str, text: str = "", span: tuple[int, int] | None = None):
        self.text = text
        self.span = span
        if span is not None:
            message = f"{message} at {span[0]}:{span[1]}"
        super().__init__(message)


class UnknownOperatorError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class WindowError(ExprSyntaxError):
    pass


# -- metrics -----------------------------------------------------------------


class InsufficientDataError(AlphaEvalError):
    pass


class UndefinedMetricError(AlphaEvalError):
    """Ratio metrics (ICIR, Sharpe) whose denominator is zero."""


class DegenerateCovarianceError(AlphaEvalError):
    pass


class BankruptPathError(AlphaEvalError):
    pass


# -- LLM logic scoring -------------------------------------------------------


class LlmTransportError(AlphaEvalError):
    pass


class LlmResponseError(AlphaEvalError):
    """The model answer could not be parsed; ``raw`` keeps the original text."""

    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class VerdictMismatchError(AlphaEvalError):
    def __init__(self, message: str, unmatched: list[str]):
        self.unmatched = list(unmatched)
        super().__init__(f"{message}: {self.unmatched}")
