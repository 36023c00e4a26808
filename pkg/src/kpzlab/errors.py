"""Exception types raised across the laboratory."""


class KPZLabError(Exception):
    """Base class for all laboratory errors."""


# -- smoothing polynomial / multipliers -------------------------------------

class DegreeTooLow(KPZLabError):
    """Smoothing polynomial has degree 2n < 4."""


class QuadraticNotUnit(KPZLabError):
    """Coefficient of the quadratic term is not exactly 1."""


class NotPositive(KPZLabError):
    """Smoothing polynomial is not positive away from the origin."""


class ModeOutOfRange(KPZLabError):
    """Requested Fourier mode exceeds the represented cutoff."""


class UnresolvedMode(KPZLabError):
    """Truncation error estimate exceeds tolerance at the requested time."""


# -- noise / clouds ----------------------------------------------------------

class AreaOverflow(KPZLabError):
    """Expected point count exceeds the configured budget."""


class TailNotSummable(KPZLabError):
    """Mollifier decay exponent does not allow periodization."""


class CoverageGap(KPZLabError):
    """Point cloud box does not cover the requested domain of dependence."""


# -- chaos calculus ----------------------------------------------------------

class BudgetExceeded(KPZLabError):
    """Enumeration or point budget exceeded."""


# -- solver ------------------------------------------------------------------

class NonFinite(KPZLabError):
    """Overflow or NaN detected in a trajectory."""


class IncommensurateGrids(KPZLabError):
    """Micro and macro grids do not map onto each other exactly."""


# -- reference sampler -------------------------------------------------------

class PositivityLost(KPZLabError):
    """Cole-Hopf state became non-positive."""


# -- model objects -----------------------------------------------------------

class MissingConstant(KPZLabError):
    """Renormalization constant required for a symbol is absent."""


class SupportEscape(KPZLabError):
    """Test function support leaves the field domain."""


class InsufficientLadder(KPZLabError):
    """Scaling ladder has too few points."""


class BoxTooSmall(KPZLabError):
    """Tail mass outside the computational box exceeds tolerance."""


# -- harness -----------------------------------------------------------------

class StageFailure(KPZLabError):
    """A pipeline stage failed; carries the stage id and cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
