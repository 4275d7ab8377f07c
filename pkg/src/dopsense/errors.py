"""Exception hierarchy.

Split along the CLI exit-code boundaries: bad bytes/files raise
DataFormatError (exit 2), numerical breakdowns raise NumericError
subclasses (exit 3). Plain ValueError is reserved for misuse of the
Python API (bad arguments, inconsistent shapes).
"""


class DopsenseError(Exception):
    """Base class for package errors."""


class DataFormatError(DopsenseError):
    """A file or byte stream does not match its declared format."""


class NumericError(DopsenseError):
    """A numerical routine could not produce a trustworthy result."""


class DegenerateCfrError(NumericError):
    """All-zero or otherwise degenerate CFR input."""


class ConvergenceError(NumericError):
    """Iterative solver hit its iteration budget before meeting tolerance."""

    def __init__(self, message, objective=None, kkt_residual=None, iterations=None):
        super().__init__(message)
        self.objective = objective
        self.kkt_residual = kkt_residual
        self.iterations = iterations


class NonContiguousWindowError(DopsenseError):
    """Packets handed to a Doppler window are not consecutive on one antenna."""
