"""Exception hierarchy shared by every pipeline stage."""


class CWError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(CWError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(CWError):
    pass


class ConfigurationError(CWError):
    pass


class CapabilityError(CWError):
    pass


class ExtractionError(CWError):
    def __init__(self, message: str, sentence_id: str | None = None):
        self.sentence_id = sentence_id
        if sentence_id is not None:
            message = f"sentence {sentence_id!r}: {message}"
        super().__init__(message)


class IntegrityError(CWError):
    pass


class ModelFormatError(CWError):
    pass


class NumericError(CWError):
    pass


class UndefinedMetricError(CWError):
    pass


class ReportError(CWError):
    pass
