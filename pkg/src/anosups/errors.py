"""Exception types raised by the library."""


class AnoSupsError(Exception):
    """Base class for all library errors."""


class NonDivisibleDimensions(AnoSupsError, ValueError):
    pass


class InvalidK(AnoSupsError, ValueError):
    pass


class IndexOutOfRange(AnoSupsError, IndexError):
    pass


class GeometryMismatch(AnoSupsError, ValueError):
    pass


class TargetNotMasked(AnoSupsError, ValueError):
    pass


class ShapeMismatch(AnoSupsError, ValueError):
    pass


class EmptySample(AnoSupsError, ValueError):
    pass


class OutOfBounds(AnoSupsError, ValueError):
    pass


class DivergedTraining(AnoSupsError, FloatingPointError):
    pass


class AllPatchesSuspected(AnoSupsError):
    """Every patch was flagged in Step 1, so there is no clean context left.

    The method assumes anomalies cover a small fraction of the image; an
    image that trips this is outside that regime.
    """
