"""
Exception types shared by the light-field modules and the lfbp CLI.
"""


class LightFieldError(Exception):
    """Base class for every error raised on purpose by this project."""


class InvalidDims(LightFieldError, ValueError):
    """Array dimensions violate the Dims5 rules (odd n_x/n_y, n_s >= n_x, ...)."""


class DimsError(InvalidDims):
    """An LF5 file header carries dimensions that violate the Dims5 rules."""


class EvenPixelDims(InvalidDims):
    """The inverse transform was asked for even n_s or n_t."""


class LayoutMismatch(InvalidDims):
    """Array dims do not match the elementary cell of a lenslet layout."""


class FormatError(LightFieldError):
    """An LF5 file is truncated or has a bad magic, version or dtype code."""


class InvalidValues(LightFieldError, ValueError):
    """Samples are negative or non-finite where that is not allowed."""


class NonFiniteInput(InvalidValues):
    """Deconvolution input contains NaN or infinity."""


class DimMismatch(LightFieldError, ValueError):
    """Operands of a projection do not have compatible shapes."""


class VerificationFailure(LightFieldError):
    """Fast transform and brute-force oracle disagree."""
