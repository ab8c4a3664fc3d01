"""Exception hierarchy shared by all modules."""


class ReorgHeatError(Exception):
    """Base class for library errors."""


class ValidationError(ReorgHeatError, ValueError):
    """Input failed a structural or physical check."""


class DimensionMismatchError(ValidationError):
    """Operators of incompatible dimension were combined."""


class SupportError(ReorgHeatError):
    """Relative entropy is infinite because supports are not nested."""


class QuadratureError(ReorgHeatError):
    """Adaptive quadrature failed to reach its tolerance.

    Attributes
    ----------
    residual : float
        Error estimate reported by the integrator.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class MultipleFixedPointsError(ReorgHeatError):
    """The generator has more than one stationary state."""


class NonStationaryError(ReorgHeatError):
    """A state passed as stationary does not satisfy L(rho) = 0."""


class IntegrationError(ReorgHeatError):
    """Time propagation aborted (step underflow or excessive drift)."""


class BudgetError(ReorgHeatError):
    """A hierarchy or convergence loop exceeds its configured budget."""


class ConvergenceError(ReorgHeatError):
    """Refinement did not reach the requested tolerance.

    Attributes
    ----------
    records : list
        The refinement history gathered before giving up.
    """

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = list(records or [])


class SolverError(ReorgHeatError):
    """Iterative or direct linear solve did not succeed."""


class RegressionError(ReorgHeatError):
    """Golden-value file is missing or has an incompatible schema."""
