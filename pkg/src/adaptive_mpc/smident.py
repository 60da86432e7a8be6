"""Recursive set-membership identification with bounded parameter drift.

The feasible parameter set is kept per output as a polytope
``{h : A_j h <= b_j}`` whose rows are the prior rows followed by one
``(-phi, +phi)`` row pair per retained measurement, oldest first. Each pair
widens every step by the drift bounds computed when the measurement was taken.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import solvers
from .errors import (
    ConfigError,
    DimensionError,
    EmptyFeasibleSet,
    EmptyPolytopeError,
)

log = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-10


def _as_blocks(mats, vecs, n_y, m, name):
    if len(mats) != n_y or len(vecs) != n_y:
        raise DimensionError(f"{name}: need one block per output ({n_y})")
    out_m, out_v = [], []
    for j, (a, b) in enumerate(zip(mats, vecs)):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if a.shape[1] != m or a.shape[0] != b.size:
            raise DimensionError(f"{name}[{j}]: matrix {a.shape} vs rhs {b.shape}, m={m}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError(f"{name}[{j}]: entries must be finite")
        a.setflags(write=False)
        b.setflags(write=False)
        out_m.append(a)
        out_v.append(b)
    return out_m, out_v


def _box_rows(lower, upper):
    m = lower.size
    return np.vstack([np.eye(m), -np.eye(m)]), np.concatenate([upper, -lower])


@dataclass
class RateBoundSet:
    """Per-output polytopes ``{x : K_j x <= l_j}`` bounding one-step parameter changes."""

    k_matrices: list
    l_vectors: list
    validate: bool = True
    interior: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        n_y = len(self.k_matrices)
        if n_y == 0:
            raise DimensionError("rate bound set needs at least one output")
        m = np.atleast_2d(self.k_matrices[0]).shape[1]
        self.k_matrices, self.l_vectors = _as_blocks(self.k_matrices, self.l_vectors, n_y, m, "rates")
        if not self.interior:
            self.interior = []
            for k, l in zip(self.k_matrices, self.l_vectors):
                self.interior.append(solvers.feasible_point(k, l))
        if self.validate:
            for k, l in zip(self.k_matrices, self.l_vectors):
                solvers.check_bounded(k, l)

    @classmethod
    def box(cls, bounds, n_y: int) -> "RateBoundSet":
        """Identical symmetric box ``|x_i| <= bounds_i`` for every output."""
        bounds = np.asarray(bounds, dtype=float).reshape(-1)
        if np.any(bounds < 0):
            raise ConfigError("rate bounds must be nonnegative")
        k, l = _box_rows(-bounds, bounds)
        return cls([k] * n_y, [l] * n_y, validate=False, interior=[np.zeros(bounds.size)] * n_y)

    @property
    def n_y(self) -> int:
        return len(self.k_matrices)

    @property
    def m(self) -> int:
        return self.k_matrices[0].shape[1]

    def contains(self, delta_h, tol: float = 1e-12) -> bool:
        delta_h = np.atleast_2d(delta_h)
        return all(
            (k @ delta_h[j] - l).max(initial=-np.inf) <= tol
            for j, (k, l) in enumerate(zip(self.k_matrices, self.l_vectors))
        )

    def margin(self, delta_h) -> float:
        """Smallest slack of ``delta_h`` over all rows (negative means outside)."""
        delta_h = np.atleast_2d(delta_h)
        return min(float((l - k @ delta_h[j]).min()) for j, (k, l) in enumerate(zip(self.k_matrices, self.l_vectors)))


@dataclass
class PriorSet:
    """Per-output polytopes ``{h : A_j0 h <= b_j0}`` known to contain the parameters."""

    a0_matrices: list
    b0_vectors: list
    validate: bool = True

    def __post_init__(self):
        n_y = len(self.a0_matrices)
        if n_y == 0:
            raise DimensionError("prior set needs at least one output")
        m = np.atleast_2d(self.a0_matrices[0]).shape[1]
        self.a0_matrices, self.b0_vectors = _as_blocks(self.a0_matrices, self.b0_vectors, n_y, m, "prior")
        if self.validate:
            for a, b in zip(self.a0_matrices, self.b0_vectors):
                solvers.feasible_point(a, b)
                solvers.check_bounded(a, b)

    @classmethod
    def box(cls, lower, upper, n_y: int) -> "PriorSet":
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise DimensionError("box bounds differ in length")
        if np.any(lower > upper):
            raise EmptyPolytopeError("box has lower > upper")
        a, b = _box_rows(lower, upper)
        return cls([a] * n_y, [b] * n_y, validate=False)

    @property
    def n_y(self) -> int:
        return len(self.a0_matrices)

    @property
    def m(self) -> int:
        return self.a0_matrices[0].shape[1]

    @property
    def row_counts(self) -> list[int]:
        return [a.shape[0] for a in self.a0_matrices]

    def margin(self, h) -> float:
        h = np.atleast_2d(h)
        return min(float((b - a @ h[j]).min()) for j, (a, b) in enumerate(zip(self.a0_matrices, self.b0_vectors)))


@dataclass(frozen=True)
class NoiseBounds:
    eps_d: np.ndarray
    eps_v: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.eps_d, dtype=float).reshape(-1)
        v = np.asarray(self.eps_v, dtype=float).reshape(-1)
        if d.shape != v.shape:
            raise DimensionError("eps_d and eps_v differ in length")
        if np.any(d <= 0) or np.any(v <= 0):
            raise ConfigError("noise bounds must be positive")
        object.__setattr__(self, "eps_d", d)
        object.__setattr__(self, "eps_v", v)

    @property
    def total(self) -> np.ndarray:
        return self.eps_d + self.eps_v

    @property
    def n_y(self) -> int:
        return self.eps_d.size


@dataclass(frozen=True)
class MeasurementRecord:
    phi: np.ndarray
    y_meas: np.ndarray
    theta_lo: np.ndarray
    theta_hi: np.ndarray
    step: int


def drift_bounds(phi, rates: RateBoundSet) -> tuple[np.ndarray, np.ndarray]:
    """Range of ``phi^T x`` over each output's rate polytope."""
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.size != rates.m:
        raise DimensionError(f"phi has length {phi.size}, expected {rates.m}")
    lo = np.zeros(rates.n_y)
    hi = np.zeros(rates.n_y)
    if not np.any(phi):
        return lo, hi
    for j, (k, l) in enumerate(zip(rates.k_matrices, rates.l_vectors)):
        start = rates.interior[j]
        hi[j] = solvers.maximize_over_polytope(k, l, phi, start=start).value
        lo[j] = -solvers.maximize_over_polytope(k, l, -phi, start=start).value
    return lo, hi


def make_record(phi, y_meas, step: int, rates: RateBoundSet) -> MeasurementRecord:
    phi = np.array(phi, dtype=float).reshape(-1)
    y_meas = np.array(y_meas, dtype=float).reshape(-1)
    if y_meas.size != rates.n_y:
        raise DimensionError(f"measurement has length {y_meas.size}, expected {rates.n_y}")
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(y_meas))):
        raise ValueError("regressor and measurement must be finite")
    lo, hi = drift_bounds(phi, rates)
    for arr in (phi, y_meas, lo, hi):
        arr.setflags(write=False)
    return MeasurementRecord(phi, y_meas, lo, hi, int(step))


@dataclass
class FeasibleParameterSet:
    """Prior rows plus a window of at most ``m_cap / 2`` measurement slabs per output.

    ``slab_rhs[i, j]`` holds the current (lower, upper) right-hand sides of the
    row pair contributed by ``window[i]`` to output j: the rows read
    ``-phi^T h <= slab_rhs[i, j, 0]`` and ``phi^T h <= slab_rhs[i, j, 1]``.
    """

    prior: PriorSet
    noise: NoiseBounds
    m_cap: int
    window: list = field(default_factory=list)
    slab_rhs: np.ndarray | None = None
    last_step: int = -1

    def __post_init__(self):
        if int(self.m_cap) != self.m_cap or self.m_cap < 2 or self.m_cap % 2:
            raise ConfigError(f"M must be an even integer >= 2, got {self.m_cap!r}")
        if self.noise.n_y != self.prior.n_y:
            raise DimensionError("noise bounds and prior set disagree on n_y")
        if self.slab_rhs is None:
            self.slab_rhs = np.zeros((0, self.prior.n_y, 2))

    @property
    def n_y(self) -> int:
        return self.prior.n_y

    @property
    def m(self) -> int:
        return self.prior.m

    @property
    def window_cap(self) -> int:
        return self.m_cap // 2

    @property
    def row_counts(self) -> list[int]:
        return [r + 2 * len(self.window) for r in self.prior.row_counts]

    def measurement_rows(self) -> np.ndarray:
        if not self.window:
            return np.zeros((0, self.m))
        phis = np.array([rec.phi for rec in self.window])
        out = np.empty((2 * phis.shape[0], self.m))
        out[0::2] = -phis
        out[1::2] = phis
        return out

    def a_matrix(self, j: int) -> np.ndarray:
        return np.vstack([self.prior.a0_matrices[j], self.measurement_rows()])

    def b_vector(self, j: int) -> np.ndarray:
        return np.concatenate([self.prior.b0_vectors[j], self.slab_rhs[:, j, :].reshape(-1)])

    def polytope(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        return self.a_matrix(j), self.b_vector(j)

    def violation(self, h) -> float:
        """Largest constraint violation of parameter matrix ``h`` (<= 0 inside)."""
        h = np.atleast_2d(h)
        worst = -np.inf
        for j in range(self.n_y):
            a, b = self.polytope(j)
            worst = max(worst, float((a @ h[j] - b).max()))
        return worst

    def contains(self, h, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.violation(h) <= tol

    def to_json(self) -> str:
        return json.dumps(snapshot(self))


def snapshot(fps: FeasibleParameterSet) -> dict:
    """Plain-dict snapshot: row-major matrices per output plus the step index."""
    return {
        "step": fps.last_step,
        "m_cap": fps.m_cap,
        "outputs": [
            {"a": fps.a_matrix(j).tolist(), "b": fps.b_vector(j).tolist(), "r0": fps.prior.row_counts[j]}
            for j in range(fps.n_y)
        ],
        "window": [
            {
                "step": rec.step,
                "phi": rec.phi.tolist(),
                "y_meas": rec.y_meas.tolist(),
                "theta_lo": rec.theta_lo.tolist(),
                "theta_hi": rec.theta_hi.tolist(),
            }
            for rec in fps.window
        ],
    }


def new_feasible_set(prior: PriorSet, noise: NoiseBounds, m_cap: int) -> FeasibleParameterSet:
    return FeasibleParameterSet(prior, noise, m_cap)


def ingest_measurement(fps: FeasibleParameterSet, rec: MeasurementRecord) -> FeasibleParameterSet:
    """Widen the retained slabs by one step of drift, append the new slab, evict the oldest."""
    if fps.last_step >= 0 and rec.step != fps.last_step + 1:
        raise ValueError(f"expected step {fps.last_step + 1}, got {rec.step}")
    if rec.phi.size != fps.m or rec.y_meas.size != fps.n_y:
        raise DimensionError("record dimensions do not match the feasible set")
    rhs = fps.slab_rhs.copy()
    if len(fps.window):
        lo = np.array([r.theta_lo for r in fps.window])
        hi = np.array([r.theta_hi for r in fps.window])
        rhs[:, :, 0] += -lo
        rhs[:, :, 1] += hi
    eps = fps.noise.total
    new = np.stack([-rec.y_meas + eps, rec.y_meas + eps], axis=-1)[None]
    rhs = np.concatenate([rhs, new])
    window = list(fps.window) + [rec]
    while len(window) > fps.window_cap:
        window.pop(0)
        rhs = rhs[1:]
    return FeasibleParameterSet(fps.prior, fps.noise, fps.m_cap, window, rhs, rec.step)


def reset_to_prior(fps: FeasibleParameterSet) -> FeasibleParameterSet:
    return FeasibleParameterSet(fps.prior, fps.noise, fps.m_cap, [], None, fps.last_step)


@dataclass
class EmptinessResult:
    nonempty: bool
    witness: np.ndarray | None = None
    empty_output: int | None = None


def emptiness_check(fps: FeasibleParameterSet, tol: float = solvers.FEAS_TOL) -> EmptinessResult:
    witness = np.zeros((fps.n_y, fps.m))
    for j in range(fps.n_y):
        rows = _informative_rows(*fps.polytope(j))
        if rows is None:
            return EmptinessResult(False, None, j)
        rep = solvers.solve_lp(solvers.LinearProgram(np.zeros(fps.m), *rows), tol)
        if rep.status is solvers.Status.INFEASIBLE:
            return EmptinessResult(False, None, j)
        if not rep.optimal:
            raise RuntimeError(f"feasibility LP for output {j} ended with {rep.status.value}")
        witness[j] = rep.solution
    return EmptinessResult(True, witness)


@dataclass
class NominalModel:
    h_c: np.ndarray

    def __post_init__(self):
        self.h_c = np.atleast_2d(np.asarray(self.h_c, dtype=float))


def _informative_rows(a, b):
    """Drop all-zero rows; returns None when one of them is contradictory."""
    zero = ~np.any(a != 0.0, axis=1)
    if np.any(b[zero] < -MEMBERSHIP_TOL):
        return None
    return a[~zero], b[~zero]


def _l1_projection(a, b, target, tol):
    m = target.size
    eye = np.eye(m)
    ineq = np.vstack([
        np.hstack([a, np.zeros((a.shape[0], m))]),
        np.hstack([eye, -eye]),
        np.hstack([-eye, -eye]),
    ])
    rhs = np.concatenate([b, target, -target])
    cost = np.concatenate([np.zeros(m), np.ones(m)])
    return solvers.solve_lp(solvers.LinearProgram(cost, ineq, rhs), tol)


def nominal_model(fps: FeasibleParameterSet, previous: NominalModel, tol: float = solvers.FEAS_TOL) -> NominalModel:
    """Point of the feasible set closest in L1 to the previous nominal model."""
    prev = previous.h_c
    if prev.shape != (fps.n_y, fps.m):
        raise DimensionError(f"previous nominal has shape {prev.shape}")
    out = prev.copy()
    for j in range(fps.n_y):
        a, b = fps.polytope(j)
        if (a @ prev[j] - b).max() <= MEMBERSHIP_TOL:
            continue
        rows = _informative_rows(a, b)
        if rows is None:
            raise EmptyFeasibleSet(j)
        rep = _l1_projection(*rows, prev[j], tol)
        if rep.status is solvers.Status.INFEASIBLE:
            raise EmptyFeasibleSet(j)
        if not rep.optimal:
            raise RuntimeError(f"nominal-model LP for output {j} ended with {rep.status.value}")
        out[j] = rep.solution[:fps.m]
    return NominalModel(out)


def init_nominal(prior: PriorSet) -> NominalModel:
    """A nonzero interior point of each prior polytope.

    The Chebyshev center is refined to the analytic center, which is unique
    and equals the midpoint on boxes; the Chebyshev LP alone is ambiguous on
    elongated boxes.
    """
    rows = []
    for a, b in zip(prior.a0_matrices, prior.b0_vectors):
        center, radius = solvers.chebyshev_center(a, b)
        if radius > 1e-9:
            try:
                center = solvers.analytic_center(a, b, center)
            except (np.linalg.LinAlgError, ValueError):
                log.debug("analytic center failed; keeping Chebyshev center")
        if not np.any(np.abs(center) > 1e-12):
            slack = b - a @ center
            i = int(np.argmax(slack))
            far = solvers.maximize_over_polytope(a, b, a[i], start=center).point
            center = 0.5 * (center + far)
            if not np.any(center):
                log.warning("prior polytope is the origin; nominal model is zero")
        rows.append(center)
    return NominalModel(np.array(rows))


__all__ = [
    "RateBoundSet",
    "PriorSet",
    "NoiseBounds",
    "MeasurementRecord",
    "FeasibleParameterSet",
    "NominalModel",
    "EmptinessResult",
    "drift_bounds",
    "make_record",
    "ingest_measurement",
    "emptiness_check",
    "reset_to_prior",
    "nominal_model",
    "init_nominal",
    "new_feasible_set",
    "snapshot",
]
