"""Exception types shared across the package."""


class DisbenchError(Exception):
    pass


class ConfigurationError(DisbenchError, ValueError):
    """Bad configuration: shapes, unknown tags, inconsistent settings."""


class UsageError(DisbenchError, ValueError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class InputError(DisbenchError, ValueError):
    """Invalid input value (out of range factor, point outside support, ...)."""


class ParseError(DisbenchError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonFiniteError(DisbenchError, FloatingPointError):
    """A loss or gradient became NaN/inf. Carries the step and term values."""

    def __init__(self, message, step=None, terms=None):
        super().__init__(message)
        self.step = step
        self.terms = dict(terms or {})


class CollapsedRepresentationError(DisbenchError):
    pass


class FitError(DisbenchError):
    pass
