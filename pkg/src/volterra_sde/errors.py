"""Exception types shared across the package."""


class VolterraError(Exception):
    """Base class for all package errors."""


class DiagonalSingularity(VolterraError):
    """phi(u, v) was requested at u == v where the integral diverges."""


class QuadratureNonConvergence(VolterraError):
    """Adaptive refinement failed to meet the requested tolerance."""


class CovarianceNotPSD(VolterraError):
    """Increment covariance failed Cholesky even after jitter escalation."""


class GridMismatch(VolterraError):
    """Step-function breakpoints do not lie on the path grid."""


class InsufficientSamples(VolterraError):
    """Too few Monte Carlo paths for the requested statistical test."""


class NegativeTime(VolterraError):
    """Semigroup evaluated at t < 0."""


class SegmentUnderflow(VolterraError):
    """Delay segment shorter than the delay length r."""


class StepLargerThanDelay(VolterraError):
    """dt > r with a nonzero neutral operator D."""


class EmptyWindow(VolterraError):
    """Time-average window [burn_in, T] is empty."""


class MissingLipschitzConstant(VolterraError):
    """Functional lacks the Lipschitz constant required by the test."""


class ConditionHViolated(VolterraError):
    """Integrability condition for the invariant measure fails."""


class ConfigError(VolterraError):
    """Invalid or missing experiment configuration field."""
