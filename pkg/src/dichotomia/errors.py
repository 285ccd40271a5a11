"""Exception hierarchy shared by all modules."""


class DichotomiaError(Exception):
    """Base class for library errors."""


class InvertibilityError(DichotomiaError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"matrix A_{index} is singular")


class DivergenceError(DichotomiaError):
    def __init__(self, last_finite, message=None):
        self.last_finite = last_finite
        super().__init__(message or f"orbit overflowed after index {last_finite}")


class PropagatorRangeError(DichotomiaError):
    """Requested product is longer than the direct-multiplication limit."""


class ParameterError(DichotomiaError, ValueError):
    pass


class ConfigError(DichotomiaError, ValueError):
    pass


class AmbiguousSplittingError(DichotomiaError):
    """The scale sits (numerically) on a growth rate, so no splitting exists."""


class DiagnosticsError(DichotomiaError):
    pass


class DichotomyRejected(DichotomiaError):
    """The scaled sequence admits no dichotomy on the window.

    ``reason`` is ``"spectral"`` when the splitting itself is ambiguous or
    changes rank, and ``"growth"`` when a fitted exponent is non-positive.
    ``inequality`` names the failing family and ``pair`` is the (m, n)
    where its worst value occurred.
    """

    def __init__(self, reason, inequality=None, pair=None, detail=""):
        self.reason = reason
        self.inequality = inequality
        self.pair = pair
        msg = f"no dichotomy ({reason})"
        if inequality:
            msg += f": {inequality}"
        if pair is not None:
            msg += f" at (m, n) = {pair}"
        if detail:
            msg += f"; {detail}"
        super().__init__(msg)


class SpectralBoundaryError(DichotomiaError):
    """Scale coincides with a growth rate within resolution; use bisection."""


class CoverageError(DichotomiaError):
    def __init__(self, message, suggested=None):
        self.suggested = suggested
        super().__init__(message)


class ConsistencyError(DichotomiaError):
    pass


class RangeError(DichotomiaError, IndexError):
    pass


class ContractionError(DichotomiaError):
    """Fixed-point iteration failed to contract (nonlinearity too large)."""

    def __init__(self, message, ratio=None):
        self.ratio = ratio
        super().__init__(message)


class GapConditionError(DichotomiaError):
    pass


class HorizonError(DichotomiaError):
    pass


class EscapeError(DichotomiaError):
    pass


class DomainError(DichotomiaError):
    pass


class AssumptionError(DichotomiaError):
    """An implementation hypothesis (such as a bounded nonlinearity) does not hold."""
