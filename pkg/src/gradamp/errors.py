"""Exception and warning types shared across the package."""


class GradampError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(GradampError):
    """A configuration value violates its contract (e.g. tau <= 0, alpha < 0)."""


class InputError(GradampError):
    """An input array was rejected (shape mismatch, non-finite entries, ...)."""


class NonFiniteGradientError(GradampError):
    """A gradient contained NaN/Inf; the surrounding step must be skipped."""


class FileFormatError(GradampError):
    """Base class for binary container format errors."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedPayloadError(FileFormatError):
    """File is shorter than its header arithmetic requires."""


class UnknownDtypeError(FileFormatError):
    """Header declares a dtype code this reader does not know."""


class NumericalWarning(RuntimeWarning):
    """A degraded-but-finite numerical fallback was taken (underflow clamp etc.)."""
