"""Adaptive MPC for time-varying linear systems with set-membership identification."""

from .errors import (
    AdaptiveMpcError,
    ConfigError,
    DimensionError,
    EmptyFeasibleSet,
    EmptyPolytopeError,
    NotPSDError,
    RecursiveFeasibilityBreach,
    ScheduleExhausted,
    SingularStructureError,
    UnboundedPolytopeError,
)

__version__ = "0.1.0"
