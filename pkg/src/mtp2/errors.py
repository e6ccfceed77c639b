"""Exception types raised by the estimation pipeline."""


class MTP2Error(ValueError):
    """Base class for all errors raised by this package."""


class DimensionMismatch(MTP2Error):
    pass


class NonPositiveEntry(MTP2Error):
    pass


class SupportViolation(MTP2Error):
    pass


class InvalidParameters(MTP2Error):
    pass


class ZeroCount(MTP2Error):
    """Raised when a box constraint is requested for counts containing zeros.

    The offending cells are kept on ``cells`` as a list of ``(i, j)`` pairs
    so the caller can decide how to fall back.
    """

    def __init__(self, cells):
        self.cells = [tuple(int(v) for v in c) for c in cells]
        super().__init__(f"{len(self.cells)} zero-count cell(s), first {self.cells[:5]}")


class SizeLimit(MTP2Error):
    pass


class CoordinateOutOfRange(MTP2Error):
    pass


class QuadratureFailure(MTP2Error):
    pass


class DegenerateRegression(MTP2Error):
    pass


class NotConverged(UserWarning):
    """Soft diagnostic: an iteration cap was hit before the tolerance was met."""
