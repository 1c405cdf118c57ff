"""Exception types shared across the package."""


class MfresnetError(Exception):
    """Base class for all package errors."""


class NonPositiveWeight(MfresnetError):
    """A cost weight (alpha, beta, lambda1, lambda2) or the horizon is not positive."""


class BoundViolation(MfresnetError):
    """A sample or type vector falls outside the compact support bound K."""


class DimensionMismatch(MfresnetError):
    """Array shapes are inconsistent with the declared dimensions."""


class GridTooSmall(MfresnetError):
    """A time grid needs at least two nodes."""


class GridMismatch(MfresnetError):
    """Control grid and simulation grid are incompatible."""


class EnsembleParamMismatch(MfresnetError):
    """An ensemble was simulated under different parameters than the evaluation asks for."""


class ScalarConfigRequired(MfresnetError):
    """Operation requires the scalar-state two-parameter configuration (d=1, m=2, no exogenous input, no batch coupling)."""


class ConfigInvalid(MfresnetError):
    """Experiment or evaluation configuration is invalid."""


class SingularSystem(MfresnetError):
    """The boundary-value linear system is singular (cannot happen for lambda1 > 0)."""


class NoDescentProgress(MfresnetError):
    """Backtracking line search hit its floor without finding a descent step."""


class NoConvergence(MfresnetError):
    """Fixed-point iteration did not reach its tolerance; carries the change trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


class MassMismatch(MfresnetError):
    """Weighted point clouds do not carry equal total mass."""


class SizeMismatch(MfresnetError):
    """Point clouds for exact assignment must have equal (small) size."""


class GradCheckFailed(MfresnetError):
    """The derivative check suite exceeded its error budget."""
