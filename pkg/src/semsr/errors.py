"""Exception hierarchy shared across the package.

DataError covers bad inputs (files, schemas, preconditions) and maps to
CLI exit code 2; the remaining errors are computation failures (exit 1).
"""


class SemsrError(Exception):
    pass


class DataError(SemsrError):
    """Malformed or missing input data, or a violated precondition."""


class NumericError(SemsrError):
    """Non-finite value in a computation that must stay finite."""


class GenerationError(SemsrError):
    """Text-generation endpoint failed, timed out, or returned nothing."""
