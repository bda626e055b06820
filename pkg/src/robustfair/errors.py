"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition.

    The CLI maps this (and subclasses) to exit code 2.
    """


class ParseError(ValidationError):
    """Raised on malformed CSV content; message names the offending row/column."""
