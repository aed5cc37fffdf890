"""Exception types shared across the library."""


class SwarmotError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(SwarmotError):
    """Vector or matrix shapes are inconsistent."""


class InvalidParameter(SwarmotError):
    """A physical or configuration parameter is out of range."""


class NotStabilizable(SwarmotError):
    """No stabilizing Riccati solution exists for the given system."""


class IllConditioned(SwarmotError):
    """A solver converged but could not meet the requested tolerance."""

    def __init__(self, message, achieved_residual=None):
        super().__init__(message)
        self.achieved_residual = achieved_residual


class SteadyStateUndefined(SwarmotError):
    """The steady-state linear system of a tracking problem is singular."""


class NonSquare(SwarmotError):
    """A square cost matrix was required."""


class Infeasible(SwarmotError):
    """The transport linear program has no feasible coupling."""


class StepSizeUnderflow(SwarmotError):
    """The adaptive integrator reduced its step below the working minimum."""


class NonFiniteState(SwarmotError):
    """Integration produced NaN or infinite state values."""
