"""Exception types shared across the package."""


class AdaptiveMpcError(Exception):
    """Base class for all package errors."""


class DimensionError(AdaptiveMpcError, ValueError):
    """Array shapes do not agree."""


class NotPSDError(AdaptiveMpcError, ValueError):
    """A quadratic program hessian is not symmetric positive semidefinite."""


class UnboundedPolytopeError(AdaptiveMpcError, ValueError):
    """A polytope expected to be bounded is unbounded in some direction."""


class EmptyPolytopeError(AdaptiveMpcError, ValueError):
    """A polytope expected to be nonempty has no feasible point."""


class SingularStructureError(AdaptiveMpcError, ValueError):
    """(I - F) is singular, or a linearization point is degenerate."""


class ConfigError(AdaptiveMpcError, ValueError):
    """Invalid scenario or controller configuration."""


class ScheduleExhausted(AdaptiveMpcError):
    """Simulation time ran past the end of the valve schedule."""


class EmptyFeasibleSet(AdaptiveMpcError):
    """The feasible parameter set became empty for some output."""

    def __init__(self, output: int, message: str | None = None):
        self.output = output
        super().__init__(message or f"feasible parameter set is empty for output {output}")


class RecursiveFeasibilityBreach(AdaptiveMpcError):
    """The finite horizon problem was infeasible after a feasible start."""

    def __init__(self, step: int, status: str):
        self.step = step
        self.status = status
        super().__init__(f"FHOCP not solvable at step {step} (status={status})")
