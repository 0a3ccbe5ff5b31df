"""Exception hierarchy.

Data problems (bad files, bad folds, out-of-range requests) derive from
:class:`DataError`; failures of the numerics on otherwise valid input derive
from :class:`NumericalError`. The CLI maps the two families to distinct exit
codes.
"""


class LocScaleError(Exception):
    """Base class for all package errors."""


class DataError(LocScaleError, ValueError):
    pass


class NumericalError(LocScaleError, ArithmeticError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonMonotonic(DataError):
    def __init__(self, ident, message=None):
        self.ident = ident
        super().__init__(message or f"individual {ident!r}: m/z values are not strictly increasing")


class InsufficientOverlap(DataError):
    def __init__(self, ident, coverage):
        self.ident = ident
        self.coverage = coverage
        super().__init__(
            f"individual {ident!r} covers only {coverage:.1%} of the reference grid (need >= 90%)"
        )


class InvalidFolds(DataError):
    pass


class OutOfRange(DataError):
    pass


class EmptyWindow(NumericalError):
    """Raised when the kernel window around some evaluation points is too sparse."""

    def __init__(self, points, bandwidth):
        self.points = list(points)
        self.bandwidth = bandwidth
        shown = ", ".join(f"{p:.6g}" for p in self.points[:5])
        more = "" if len(self.points) <= 5 else f" (+{len(self.points) - 5} more)"
        super().__init__(
            f"empty or degenerate kernel window at x0 = {shown}{more} "
            f"with bandwidth {bandwidth:.6g}; try a larger bandwidth"
        )


class AllZeroWeights(NumericalError):
    pass


class DegenerateCurve(NumericalError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(
            message or f"curve is numerically constant over the design of individual {index}"
        )


class NonFinite(NumericalError):
    pass


class AllCellsInvalid(NumericalError):
    pass
