"""Robust receding-horizon controller over the identified parameter set.

Each step builds a finite-horizon problem in the input sequence U:

* quadratic tracking cost on the nominal-model prediction with an offset
  correction from the current prediction error;
* input amplitude and rate limits;
* a terminal condition forcing the last regressor to be a steady state;
* output limits that must hold for every parameter matrix in the predicted
  feasible sets, ``sum_j c_lj sigma_j,k(phi(k|t)) + dbar_l <= g_l``.

The robust limits are equivalent to the linear dual system with multipliers
Lambda (see :func:`build_dual_constraints` and :meth:`FhocpProblem.to_qp`).
The default solver treats them exactly by cutting planes: each cut is the
linear constraint induced by a maximizing vertex, support values come from
small LPs, and Lambda is read off the LP multipliers at convergence.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import smident, solvers
from .errors import ConfigError, DimensionError, EmptyFeasibleSet, RecursiveFeasibilityBreach
from .model import ModelStructure, advance_regressor
from .smident import FeasibleParameterSet, NominalModel, PriorSet, RateBoundSet

log = logging.getLogger(__name__)

ROBUST_TOL = 1e-9


def _psd(mat, name, size):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape != (size, size):
        raise DimensionError(f"{name} must be {size}x{size}, got {mat.shape}")
    if np.abs(mat - mat.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(mat).max(initial=0.0)):
        raise ConfigError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat)[0] < -1e-9:
        raise ConfigError(f"{name} must be positive semidefinite")
    return mat


@dataclass
class MpcConfig:
    horizon: int
    q_weight: np.ndarray
    r_weight: np.ndarray
    s_weight: np.ndarray
    cu_matrix: np.ndarray
    gu_vector: np.ndarray
    cdu_matrix: np.ndarray
    gdu_vector: np.ndarray
    cy_matrix: np.ndarray
    gy_vector: np.ndarray
    task_horizon: int | None = None
    infeasibility_policy: str = "fail_fast"

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("horizon must be a positive integer")
        self.horizon = int(self.horizon)
        self.cu_matrix = np.atleast_2d(np.asarray(self.cu_matrix, dtype=float))
        self.cdu_matrix = np.atleast_2d(np.asarray(self.cdu_matrix, dtype=float))
        self.cy_matrix = np.atleast_2d(np.asarray(self.cy_matrix, dtype=float))
        self.gu_vector = np.asarray(self.gu_vector, dtype=float).reshape(-1)
        self.gdu_vector = np.asarray(self.gdu_vector, dtype=float).reshape(-1)
        self.gy_vector = np.asarray(self.gy_vector, dtype=float).reshape(-1)
        n_u = self.cu_matrix.shape[1]
        n_y = self.cy_matrix.shape[1]
        self.q_weight = _psd(self.q_weight, "Q", n_y)
        self.r_weight = _psd(self.r_weight, "R", n_u)
        self.s_weight = _psd(self.s_weight, "S", n_u)
        for mat, vec, name in ((self.cu_matrix, self.gu_vector, "C_u"), (self.cdu_matrix, self.gdu_vector, "C_du"),
                               (self.cy_matrix, self.gy_vector, "C_y")):
            if mat.shape[0] != vec.size:
                raise DimensionError(f"{name} has {mat.shape[0]} rows but its bound has {vec.size}")
        if self.cdu_matrix.shape[1] != n_u:
            raise DimensionError("C_du column count must equal the number of inputs")
        if np.any(self.gdu_vector < 0):
            raise ConfigError("the input-rate set must contain the origin")
        solvers.check_bounded(self.cu_matrix, self.gu_vector)
        if self.infeasibility_policy not in ("fail_fast", "restart"):
            raise ConfigError(f"unknown infeasibility policy {self.infeasibility_policy!r}")

    @property
    def n_u(self) -> int:
        return self.cu_matrix.shape[1]

    @property
    def n_y(self) -> int:
        return self.cy_matrix.shape[1]

    @property
    def n_o(self) -> int:
        return self.cy_matrix.shape[0]

    def check_structure(self, structure: ModelStructure) -> None:
        if structure.n_u != self.n_u or structure.n_y != self.n_y:
            raise DimensionError("controller and model structure disagree on input/output counts")
        memory = structure.memory
        if memory is not None and self.horizon < memory:
            raise ConfigError(f"horizon {self.horizon} is shorter than the regressor memory {memory}")

    def dbar(self, eps_d) -> np.ndarray:
        return np.abs(self.cy_matrix) @ np.asarray(eps_d, dtype=float)


# ----------------------------------------------------------------------------
# Predicted feasible sets
# ----------------------------------------------------------------------------


@dataclass
class PredictedFpsSequence:
    """``sets[i][j] = (A, b)`` describes output j of the set predicted i+1 steps ahead."""

    sets: list
    kept_steps: list
    step: int
    row_ids: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.sets)

    def row_counts(self) -> list[list[int]]:
        return [[a.shape[0] for a, _ in per_k] for per_k in self.sets]


def predict_fps_sequence(fps: FeasibleParameterSet, n: int, prior: PriorSet | None = None) -> PredictedFpsSequence:
    """Propagate the feasible set ``n`` steps ahead without new measurements.

    A retained measurement taken at step ``s`` is still inside the identifier
    window at step ``k`` iff ``s > k - M/2``; its slab widens by one step of
    drift per step ahead. The last entry is the prior set.
    """
    prior = fps.prior if prior is None else prior
    t = fps.last_step
    half = fps.window_cap
    steps = np.array([rec.step for rec in fps.window], dtype=int)
    lo = np.array([rec.theta_lo for rec in fps.window]).reshape(len(fps.window), fps.n_y)
    hi = np.array([rec.theta_hi for rec in fps.window]).reshape(len(fps.window), fps.n_y)
    rows = fps.measurement_rows()
    rhs = fps.slab_rhs.copy()
    sets, kept, ids = [], [], []
    # stable labels: prior row r -> -(r + 1), record rows -> 2 * step + side
    prior_ids = [-(np.arange(a0.shape[0]) + 1) for a0 in prior.a0_matrices]
    for i in range(1, n + 1):
        if i == n:
            sets.append([(prior.a0_matrices[j], prior.b0_vectors[j]) for j in range(fps.n_y)])
            kept.append([])
            ids.append(prior_ids)
            break
        rhs[:, :, 0] += -lo
        rhs[:, :, 1] += hi
        keep = np.flatnonzero(steps > t + i - half)
        row_idx = np.stack([2 * keep, 2 * keep + 1], axis=1).reshape(-1)
        per_k = []
        for j in range(fps.n_y):
            a = np.vstack([prior.a0_matrices[j], rows[row_idx]])
            b = np.concatenate([prior.b0_vectors[j], rhs[keep, j, :].reshape(-1)])
            per_k.append((a, b))
        sets.append(per_k)
        kept.append(steps[keep].tolist())
        rec_ids = np.stack([2 * steps[keep], 2 * steps[keep] + 1], axis=1).reshape(-1)
        ids.append([np.concatenate([pid, rec_ids]) for pid in prior_ids])
    return PredictedFpsSequence(sets, kept, t, ids)


# ----------------------------------------------------------------------------
# Problem assembly
# ----------------------------------------------------------------------------


@dataclass
class PhiMap:
    """``phi(t+i|t) = mats[i-1] @ U + offsets[i-1]`` for i = 1..N."""

    mats: np.ndarray
    offsets: np.ndarray

    def at(self, u_seq) -> np.ndarray:
        return self.mats @ np.asarray(u_seq, dtype=float) + self.offsets


def regressor_maps(structure: ModelStructure, phi, n: int) -> PhiMap:
    m, n_u = structure.m, structure.n_u
    f, g = structure.f_matrix, structure.g_matrix
    mats = np.zeros((n, m, n * n_u))
    offsets = np.zeros((n, m))
    cur_mat = np.zeros((m, n * n_u))
    cur_off = np.asarray(phi, dtype=float).copy()
    for i in range(n):
        cur_mat = f @ cur_mat
        cur_mat[:, i * n_u:(i + 1) * n_u] += g
        cur_off = f @ cur_off
        mats[i] = cur_mat
        offsets[i] = cur_off
    return PhiMap(mats, offsets)


@dataclass
class DualBlocks:
    """Linear system in ``(U, Lambda)`` equivalent to the robust output limits.

    For each (l, k) block: ``A(k)^T lam = c_l (x) phi(k)`` rewritten as
    ``lam_mat @ lam - u_mat @ U = eq_rhs``, plus ``b(k)^T lam <= g_l - dbar_l``
    and ``lam >= 0``. ``outputs`` lists which outputs' sub-blocks are kept.
    """

    pairs: list  # (l, i) per block
    outputs: list  # kept output indices per block
    lam_mats: list
    u_mats: list
    eq_rhs: list
    b_rows: list
    ineq_rhs: list

    @property
    def n_lambda(self) -> int:
        return sum(mat.shape[1] for mat in self.lam_mats)


def build_dual_constraints(seq: PredictedFpsSequence, cy, gy, dbar, phi_map: PhiMap,
                           drop_zero_blocks: bool = False) -> DualBlocks:
    cy = np.atleast_2d(np.asarray(cy, dtype=float))
    gy = np.asarray(gy, dtype=float).reshape(-1)
    dbar = np.asarray(dbar, dtype=float).reshape(-1)
    n_o, n_y = cy.shape
    if gy.size != n_o or dbar.size != n_o:
        raise DimensionError("C_y, g_y and dbar disagree on the number of output limits")
    if phi_map.mats.shape[0] != seq.horizon:
        raise DimensionError("regressor map and predicted sets disagree on the horizon")
    m = phi_map.mats.shape[1]
    out = DualBlocks([], [], [], [], [], [], [])
    for l in range(n_o):
        for i in range(seq.horizon):
            kept = [j for j in range(n_y) if not drop_zero_blocks or cy[l, j] != 0.0]
            per_j = seq.sets[i]
            if any(per_j[j][0].shape[1] != m for j in range(n_y)):
                raise DimensionError("predicted set dimension does not match the regressor length")
            widths = [per_j[j][0].shape[0] for j in kept]
            lam_mat = np.zeros((m * len(kept), sum(widths)))
            col = 0
            for pos, j in enumerate(kept):
                a, _ = per_j[j]
                lam_mat[pos * m:(pos + 1) * m, col:col + a.shape[0]] = a.T
                col += a.shape[0]
            coeff = np.array([cy[l, j] for j in kept])
            u_mat = np.kron(coeff[:, None], phi_map.mats[i])
            rhs = np.kron(coeff, phi_map.offsets[i])
            b_row = np.concatenate([per_j[j][1] for j in kept]) if kept else np.zeros(0)
            out.pairs.append((l, i))
            out.outputs.append(kept)
            out.lam_mats.append(lam_mat)
            out.u_mats.append(u_mat)
            out.eq_rhs.append(rhs)
            out.b_rows.append(b_row)
            out.ineq_rhs.append(gy[l] - dbar[l])
    return out


def dual_system_feasible(blocks: DualBlocks, u_seq, tol: float = solvers.FEAS_TOL) -> bool:
    """Whether multipliers exist for every block at a fixed input sequence."""
    u_seq = np.asarray(u_seq, dtype=float)
    for lam_mat, u_mat, rhs, b_row, g in zip(blocks.lam_mats, blocks.u_mats, blocks.eq_rhs,
                                             blocks.b_rows, blocks.ineq_rhs):
        width = lam_mat.shape[1]
        target = rhs + (u_mat @ u_seq if u_mat.shape[1] else 0.0)
        if width == 0:
            if np.abs(target).max(initial=0.0) > tol or g < -tol:
                return False
            continue
        ineq = np.vstack([-np.eye(width), b_row[None, :]])
        ineq_rhs = np.concatenate([np.zeros(width), [g]])
        rep = solvers.solve_lp(solvers.LinearProgram(np.zeros(width), ineq, ineq_rhs, lam_mat, target), tol)
        if rep.status is solvers.Status.INFEASIBLE:
            return False
        if not rep.optimal:
            raise RuntimeError(f"dual feasibility LP ended with {rep.status.value}")
    return True


class SupportOracle:
    """Support values of the predicted sets, warm-started per (output, step, direction sign).

    ``carried`` maps the same keys to bases (as row labels) from an earlier
    sequence; they seed the first evaluation whenever all rows still exist.
    """

    def __init__(self, seq: PredictedFpsSequence, start: np.ndarray, carried: dict | None = None):
        self.seq = seq
        self.start = start
        self.bases: dict = {}
        self.carried = carried or {}
        self.lp_count = 0

    def _seed(self, key, j: int, i: int):
        labels = self.carried.get(key)
        if labels is None or not self.seq.row_ids:
            return None
        index = {int(v): r for r, v in enumerate(self.seq.row_ids[i][j])}
        try:
            return np.array([index[int(v)] for v in labels], dtype=int)
        except KeyError:
            return None

    def evaluate(self, j: int, i: int, w, tag=None) -> solvers.PolytopeMax:
        a, b = self.seq.sets[i][j]
        key = (j, i, tag)
        basis = self.bases.get(key)
        if basis is None:
            basis = self._seed(key, j, i)
        res = solvers.maximize_over_polytope(a, b, w, start=self.start[j], basis=basis)
        self.bases[key] = res.basis
        self.lp_count += 1
        return res

    def labelled_bases(self) -> dict:
        if not self.seq.row_ids:
            return {}
        return {key: self.seq.row_ids[key[1]][key[0]][basis] for key, basis in self.bases.items()}


@dataclass
class FhocpProblem:
    cfg: MpcConfig
    structure: ModelStructure
    seq: PredictedFpsSequence
    phi_map: PhiMap
    hessian: np.ndarray
    linear: np.ndarray
    constant: float
    input_matrix: np.ndarray
    input_rhs: np.ndarray
    terminal_matrix: np.ndarray
    terminal_rhs: np.ndarray
    dbar: np.ndarray
    nominal: np.ndarray
    d_hat: np.ndarray
    y_des: np.ndarray
    u_prev: np.ndarray
    phi: np.ndarray
    _oracle: SupportOracle | None = field(default=None, repr=False)

    @property
    def n_vars(self) -> int:
        return self.hessian.shape[0]

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    def cost(self, u_seq) -> float:
        u_seq = np.asarray(u_seq, dtype=float)
        return float(0.5 * u_seq @ self.hessian @ u_seq + self.linear @ u_seq + self.constant)

    def oracle(self, carried: dict | None = None) -> SupportOracle:
        if self._oracle is None:
            self._oracle = SupportOracle(self.seq, self.nominal, carried)
        return self._oracle

    def robust_values(self, u_seq, with_points: bool = False, pairs=None):
        """Worst-case value of every output limit, ``(n_o, N)``, minus its bound.

        Nonpositive entries mean the limit holds for the whole predicted set.
        With ``with_points`` also returns the maximizers per (j, i, sign).
        ``pairs`` restricts the work to those (l, i) entries; the rest are -inf.
        """
        cy = self.cfg.cy_matrix
        n_o, n_y = cy.shape
        phis = self.phi_map.at(u_seq)
        oracle = self.oracle()
        cache: dict = {}
        out = np.zeros((n_o, self.horizon))
        if pairs is not None:
            out[:] = -np.inf
        for i in range(self.horizon):
            phi = phis[i]
            zero = not np.any(phi)
            for l in range(n_o):
                if pairs is not None and (l, i) not in pairs:
                    continue
                total = self.dbar[l] - self.cfg.gy_vector[l]
                for j in range(n_y):
                    c = cy[l, j]
                    if c == 0.0 or zero:
                        continue
                    sign = 1.0 if c > 0 else -1.0
                    key = (j, i, sign)
                    if key not in cache:
                        cache[key] = oracle.evaluate(j, i, sign * phi, sign)
                    total += abs(c) * cache[key].value
                out[l, i] = total
        if with_points:
            return out, cache
        return out

    def input_violation(self, u_seq) -> float:
        return float((self.input_matrix @ u_seq - self.input_rhs).max(initial=-np.inf))

    def terminal_residual(self, u_seq) -> float:
        if self.terminal_matrix.shape[0] == 0:
            return 0.0
        return float(np.abs(self.terminal_matrix @ u_seq - self.terminal_rhs).max())

    def max_violation(self, u_seq) -> float:
        """Largest violation over input, terminal and robust output constraints."""
        return max(0.0, self.input_violation(u_seq), self.terminal_residual(u_seq),
                   float(self.robust_values(u_seq).max(initial=-np.inf)))

    def predicted_outputs(self, u_seq) -> np.ndarray:
        return self.phi_map.at(u_seq) @ self.nominal.T + self.d_hat

    def dual_blocks(self, drop_zero_blocks: bool = True) -> DualBlocks:
        return build_dual_constraints(self.seq, self.cfg.cy_matrix, self.cfg.gy_vector, self.dbar, self.phi_map,
                                      drop_zero_blocks=drop_zero_blocks)

    def to_qp(self, drop_zero_blocks: bool = True) -> tuple[solvers.QuadraticProgram, DualBlocks]:
        """Joint QP in ``(U, Lambda)`` with the dual system written out explicitly."""
        blocks = self.dual_blocks(drop_zero_blocks)
        nu = self.n_vars
        nl = blocks.n_lambda
        n = nu + nl
        hess = np.zeros((n, n))
        hess[:nu, :nu] = self.hessian
        lin = np.concatenate([self.linear, np.zeros(nl)])
        ineq = [np.hstack([self.input_matrix, np.zeros((self.input_matrix.shape[0], nl))])]
        ineq_rhs = [self.input_rhs]
        eq = [np.hstack([self.terminal_matrix, np.zeros((self.terminal_matrix.shape[0], nl))])]
        eq_rhs = [self.terminal_rhs]
        col = nu
        for lam_mat, u_mat, rhs, b_row, g in zip(blocks.lam_mats, blocks.u_mats, blocks.eq_rhs,
                                                 blocks.b_rows, blocks.ineq_rhs):
            width = lam_mat.shape[1]
            block_eq = np.zeros((lam_mat.shape[0], n))
            block_eq[:, :nu] = -u_mat
            block_eq[:, col:col + width] = lam_mat
            eq.append(block_eq)
            eq_rhs.append(rhs)
            row = np.zeros((1, n))
            row[0, col:col + width] = b_row
            ineq.append(row)
            ineq_rhs.append([g])
            nonneg = np.zeros((width, n))
            nonneg[:, col:col + width] = -np.eye(width)
            ineq.append(nonneg)
            ineq_rhs.append(np.zeros(width))
            col += width
        qp = solvers.QuadraticProgram(hess, lin, np.vstack(ineq), np.concatenate(ineq_rhs),
                                      np.vstack(eq), np.concatenate(eq_rhs), constant=self.constant)
        return qp, blocks


def _difference_operator(n: int, n_u: int) -> np.ndarray:
    return np.eye(n * n_u) - np.eye(n * n_u, k=-n_u)


def tracking_cost(cfg: MpcConfig, phi_map: PhiMap, h_c, d_hat, u_prev, y_des):
    """``(P, q, c)`` with cost ``0.5 U^T P U + q^T U + c`` for the nominal prediction."""
    n, n_u = cfg.horizon, cfg.n_u
    q, r, s = cfg.q_weight, cfg.r_weight, cfg.s_weight
    hess = np.zeros((n * n_u, n * n_u))
    lin = np.zeros(n * n_u)
    const = 0.0
    for i in range(n):
        gain = h_c @ phi_map.mats[i]
        resid = h_c @ phi_map.offsets[i] + d_hat - y_des[i]
        hess += gain.T @ q @ gain
        lin += gain.T @ q @ resid
        const += resid @ q @ resid
    diff = _difference_operator(n, n_u)
    r_bar = np.kron(np.eye(n), r)
    shift = np.zeros(n * n_u)
    shift[:n_u] = u_prev
    hess += np.kron(np.eye(n), s) + diff.T @ r_bar @ diff
    lin -= diff.T @ r_bar @ shift
    const += shift @ r_bar @ shift
    hess = hess + hess.T
    return hess, 2.0 * lin, float(const)


def input_limits(cfg: MpcConfig, u_prev) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude and rate limits over the horizon as ``A U <= b``."""
    n = cfg.horizon
    cu, cdu = cfg.cu_matrix, cfg.cdu_matrix
    diff = _difference_operator(n, cfg.n_u)
    mat = np.vstack([np.kron(np.eye(n), cu), np.kron(np.eye(n), cdu) @ diff])
    rate_rhs = np.tile(cfg.gdu_vector, n)
    rate_rhs[:cdu.shape[0]] += cdu @ u_prev
    return mat, np.concatenate([np.tile(cfg.gu_vector, n), rate_rhs])


def build_fhocp(cfg: MpcConfig, structure: ModelStructure, nominal: NominalModel, fps: FeasibleParameterSet,
                y_meas, phi, u_prev, y_des_window, eps_d=None) -> FhocpProblem:
    """Assemble cost, input limits, terminal condition and the predicted sets at step ``fps.last_step``."""
    cfg.check_structure(structure)
    n, n_u, n_y, m = cfg.horizon, structure.n_u, structure.n_y, structure.m
    h_c = nominal.h_c
    if h_c.shape != (n_y, m):
        raise DimensionError(f"nominal model has shape {h_c.shape}, expected {(n_y, m)}")
    y_meas = np.asarray(y_meas, dtype=float).reshape(-1)
    phi = np.asarray(phi, dtype=float).reshape(-1)
    u_prev = np.asarray(u_prev, dtype=float).reshape(-1)
    y_des = np.atleast_2d(np.asarray(y_des_window, dtype=float))
    if y_des.shape != (n, n_y):
        raise DimensionError(f"y_des window has shape {y_des.shape}, expected {(n, n_y)}")
    if y_meas.size != n_y or phi.size != m or u_prev.size != n_u:
        raise DimensionError("measurement, regressor or previous input has the wrong length")
    eps_d = fps.noise.eps_d if eps_d is None else np.asarray(eps_d, dtype=float)

    phi_map = regressor_maps(structure, phi, n)
    d_hat = y_meas - h_c @ phi
    hess, lin, const = tracking_cost(cfg, phi_map, h_c, d_hat, u_prev, y_des)
    input_matrix, input_rhs = input_limits(cfg, u_prev)

    lead = np.eye(m) - structure.f_matrix
    term = lead @ phi_map.mats[-1]
    term[:, (n - 1) * n_u:] -= structure.g_matrix
    term_rhs = -lead @ phi_map.offsets[-1]
    scale = 1.0 + np.abs(term).max(initial=0.0)
    informative = np.any(np.abs(term) > 1e-13 * scale, axis=1) | (np.abs(term_rhs) > 1e-13 * scale)
    term, term_rhs = term[informative], term_rhs[informative]

    seq = predict_fps_sequence(fps, n)
    return FhocpProblem(cfg, structure, seq, phi_map, hess, lin, const, input_matrix,
                        input_rhs, term, term_rhs, cfg.dbar(eps_d), h_c, d_hat, y_des, u_prev, phi)


def evaluate_cost(problem: FhocpProblem, u_seq) -> float:
    """Tracking cost by forward simulation of the regressor and nominal outputs."""
    n_u = problem.structure.n_u
    cfg = problem.cfg
    u = np.asarray(u_seq, dtype=float).reshape(problem.horizon, n_u)
    phi = problem.phi.copy()
    prev = problem.u_prev
    total = 0.0
    for i in range(problem.horizon):
        phi = advance_regressor(problem.structure, phi, u[i])
        err = problem.nominal @ phi + problem.d_hat - problem.y_des[i]
        du = u[i] - prev
        total += err @ cfg.q_weight @ err + u[i] @ cfg.s_weight @ u[i] + du @ cfg.r_weight @ du
        prev = u[i]
    return float(total)


# ----------------------------------------------------------------------------
# Solving
# ----------------------------------------------------------------------------


@dataclass
class FhocpSolution:
    status: solvers.Status
    u_seq: np.ndarray
    objective: float
    lambdas: dict
    iterations: int = 0
    cuts: int = 0
    support_lps: int = 0
    max_violation: float = np.nan
    points: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is solvers.Status.OPTIMAL


def shifted_hold(u_seq, n_u: int) -> np.ndarray:
    """Drop the first move and repeat the last one."""
    u = np.asarray(u_seq, dtype=float).reshape(-1, n_u)
    return np.concatenate([u[1:], u[-1:]]).reshape(-1)


def _recover_lambdas(problem: FhocpProblem, points: dict) -> dict:
    cy = problem.cfg.cy_matrix
    lambdas = {}
    for l in range(cy.shape[0]):
        for i in range(problem.horizon):
            per_j = []
            for j in range(cy.shape[1]):
                a, _ = problem.seq.sets[i][j]
                c = cy[l, j]
                key = (j, i, 1.0 if c > 0 else -1.0)
                if c == 0.0 or key not in points:
                    per_j.append(np.zeros(a.shape[0]))
                else:
                    per_j.append(abs(c) * points[key].multipliers)
            lambdas[(l, i)] = per_j
    return lambdas


def _solve_cutting_plane(problem: FhocpProblem, warm_start, tol: float, max_rounds: int,
                         seed_points: dict | None = None) -> FhocpSolution:
    cy = problem.cfg.cy_matrix
    n_o, n_y = cy.shape
    n = problem.horizon
    h_c = problem.nominal
    cut_rows, cut_rhs = [], []

    def add_cut(l, i, points_by_j):
        mat = problem.phi_map.mats[i]
        off = problem.phi_map.offsets[i]
        row = np.zeros(problem.n_vars)
        rhs = problem.cfg.gy_vector[l] - problem.dbar[l]
        for j in range(n_y):
            c = cy[l, j]
            if c == 0.0:
                continue
            hj = points_by_j[j]
            row += c * (hj @ mat)
            rhs -= c * (hj @ off)
        if not np.any(row) and rhs >= 0.0:
            return
        cut_rows.append(row)
        cut_rhs.append(rhs)

    for l in range(n_o):
        for i in range(n):
            add_cut(l, i, h_c)
    # maximizers carried from an earlier solve give valid cuts wherever they still lie in the set
    for l in range(n_o):
        for i in range(n):
            pts = _member_points(problem, l, i, seed_points or {})
            if pts is not None:
                add_cut(l, i, pts)

    x0 = None
    if warm_start is not None:
        x0 = np.asarray(warm_start, dtype=float)
    rounds = 0
    support_before = problem.oracle().lp_count
    last = None
    # intermediate rounds only recheck pairs that have been violated; acceptance needs a full check
    watched: set = set()
    while True:
        rounds += 1
        qp = solvers.QuadraticProgram(
            problem.hessian, problem.linear,
            np.vstack([problem.input_matrix, np.array(cut_rows)]),
            np.concatenate([problem.input_rhs, cut_rhs]),
            problem.terminal_matrix, problem.terminal_rhs, constant=problem.constant)
        rep = solvers.solve_qp(qp, x0=x0)
        if not rep.optimal:
            return FhocpSolution(rep.status, np.full(problem.n_vars, np.nan), np.nan, {}, rounds, len(cut_rows),
                                 problem.oracle().lp_count - support_before)
        u_seq = rep.solution
        values = None
        if watched:
            values, points = problem.robust_values(u_seq, with_points=True, pairs=watched)
            if float(values.max(initial=-np.inf)) <= tol:
                values = None
        if values is None:
            values, points = problem.robust_values(u_seq, with_points=True)
        worst = float(values.max(initial=-np.inf))
        watched.update((l, i) for l, i in zip(*np.nonzero(values > tol)))
        if worst <= tol:
            lambdas = _recover_lambdas(problem, points)
            sol = FhocpSolution(solvers.Status.OPTIMAL, u_seq, rep.objective, lambdas, rounds, len(cut_rows),
                                problem.oracle().lp_count - support_before, max(worst, 0.0))
            sol.points = {key: res.point for key, res in points.items()}
            return sol
        if rounds >= max_rounds:
            log.warning("cutting-plane loop stopped after %d rounds, violation %.3e", rounds, worst)
            return FhocpSolution(solvers.Status.ITERATION_LIMIT, u_seq, rep.objective, {}, rounds, len(cut_rows),
                                 problem.oracle().lp_count - support_before, worst)
        if last is not None and np.array_equal(u_seq, last):
            log.warning("cutting-plane loop stalled at violation %.3e", worst)
            return FhocpSolution(solvers.Status.ITERATION_LIMIT, u_seq, rep.objective, {}, rounds, len(cut_rows),
                                 problem.oracle().lp_count - support_before, worst)
        last = u_seq
        for l in range(n_o):
            for i in range(n):
                if values[l, i] <= tol:
                    continue
                pts = np.zeros_like(h_c)
                for j in range(n_y):
                    c = cy[l, j]
                    if c != 0.0:
                        pts[j] = points[(j, i, 1.0 if c > 0 else -1.0)].point
                add_cut(l, i, pts)


def _member_points(problem: FhocpProblem, l: int, i: int, points: dict):
    cy = problem.cfg.cy_matrix
    out = problem.nominal.copy()
    found = False
    for j in range(cy.shape[1]):
        c = cy[l, j]
        if c == 0.0:
            continue
        h = points.get((j, i, 1.0 if c > 0 else -1.0))
        if h is None:
            return None
        a, b = problem.seq.sets[i][j]
        if np.any(a @ h > b):
            return None
        out[j] = h
        found = True
    return out if found else None


def _solve_full(problem: FhocpProblem, warm_start) -> FhocpSolution:
    qp, blocks = problem.to_qp()
    x0 = None
    rep = solvers.solve_qp(qp, x0=x0)
    if not rep.optimal:
        return FhocpSolution(rep.status, np.full(problem.n_vars, np.nan), np.nan, {}, rep.iterations)
    nu = problem.n_vars
    u_seq = rep.solution[:nu]
    lambdas = {}
    col = nu
    for pair, kept, lam_mat in zip(blocks.pairs, blocks.outputs, blocks.lam_mats):
        per_j = [np.zeros(problem.seq.sets[pair[1]][j][0].shape[0]) for j in range(problem.cfg.n_y)]
        for j in kept:
            width = problem.seq.sets[pair[1]][j][0].shape[0]
            per_j[j] = rep.solution[col:col + width]
            col += width
        lambdas[pair] = per_j
    return FhocpSolution(solvers.Status.OPTIMAL, u_seq, rep.objective, lambdas, rep.iterations, 0, 0,
                         max(0.0, float(problem.robust_values(u_seq).max(initial=0.0))))


def solve_fhocp(problem: FhocpProblem, method: str = "cutting_plane", warm_start=None,
                tol: float = ROBUST_TOL, max_rounds: int = 500, seed_points: dict | None = None) -> FhocpSolution:
    """Solve the robust problem.

    ``cutting_plane`` adds worst-case vertex cuts until the support check
    passes; ``full`` solves the joint primal-dual QP in one shot (small
    instances only). ``seed_points`` are maximizers from an earlier solve,
    keyed like ``FhocpSolution.points``.
    """
    if method == "cutting_plane":
        return _solve_cutting_plane(problem, warm_start, tol, max_rounds, seed_points)
    if method == "full":
        return _solve_full(problem, warm_start)
    raise ValueError(f"unknown method {method!r}")


# ----------------------------------------------------------------------------
# Closed loop
# ----------------------------------------------------------------------------


@dataclass
class ControlDecision:
    u_apply: np.ndarray
    u_seq: np.ndarray
    y_pred: np.ndarray
    status: str
    objective: float
    info: dict = field(default_factory=dict)


def output_envelope(fps: FeasibleParameterSet, phi, eps_d, start=None) -> tuple[np.ndarray, np.ndarray]:
    """Range of each output ``h_j^T phi + d_j`` over the feasible set and the disturbance bound."""
    phi = np.asarray(phi, dtype=float)
    lower = np.zeros(fps.n_y)
    upper = np.zeros(fps.n_y)
    for j in range(fps.n_y):
        if np.any(phi):
            a, b = fps.polytope(j)
            s = None if start is None else start[j]
            upper[j] = solvers.maximize_over_polytope(a, b, phi, start=s).value
            lower[j] = -solvers.maximize_over_polytope(a, b, -phi, start=s).value
    return lower - eps_d, upper + eps_d


class AdaptiveController:
    """Identify, pick a nominal model, solve the robust problem, apply the first move."""

    def __init__(self, structure: ModelStructure, cfg: MpcConfig, prior: PriorSet, rates: RateBoundSet,
                 noise: smident.NoiseBounds, m_cap: int, nominal: NominalModel | None = None,
                 method: str = "cutting_plane"):
        cfg.check_structure(structure)
        if prior.m != structure.m or rates.m != structure.m:
            raise DimensionError("prior/rate sets do not match the regressor length")
        self.structure = structure
        self.cfg = cfg
        self.rates = rates
        self.noise = noise
        self.method = method
        self.fps = smident.new_feasible_set(prior, noise, m_cap)
        self.nominal = smident.init_nominal(prior) if nominal is None else nominal
        self.phi = structure.zero_regressor()
        self.u_prev = np.zeros(structure.n_u)
        self.u_seq: np.ndarray | None = None
        self.step_index = 0
        self.restarts = 0
        self.last_problem: FhocpProblem | None = None
        self._carried_bases: dict = {}
        self._carried_points: dict = {}

    def candidate(self) -> np.ndarray:
        """The shifted-and-held previous plan (hold the last input at the first step)."""
        if self.u_seq is None:
            return np.tile(self.u_prev, self.cfg.horizon)
        return shifted_hold(self.u_seq, self.structure.n_u)

    def _identify(self, y_meas):
        rec = smident.make_record(self.phi, y_meas, self.step_index, self.rates)
        self.fps = smident.ingest_measurement(self.fps, rec)
        try:
            self.nominal = smident.nominal_model(self.fps, self.nominal)
        except EmptyFeasibleSet:
            if self.cfg.infeasibility_policy != "restart":
                raise
            log.warning("step %d: feasible set empty, restarting from the prior", self.step_index)
            self.restarts += 1
            fresh = smident.reset_to_prior(self.fps)
            fresh.last_step = self.step_index - 1
            self.fps = smident.ingest_measurement(fresh, rec)
            self.nominal = smident.nominal_model(self.fps, self.nominal)

    def step(self, y_meas, y_des_window) -> ControlDecision:
        t0 = time.perf_counter()
        self._identify(y_meas)
        t1 = time.perf_counter()
        problem = build_fhocp(self.cfg, self.structure, self.nominal, self.fps, y_meas, self.phi, self.u_prev,
                              y_des_window)
        self.last_problem = problem
        problem.oracle(self._carried_bases)
        sol = solve_fhocp(problem, self.method, warm_start=self.candidate(), seed_points=self._carried_points)
        self._carried_bases = problem.oracle().labelled_bases()
        self._carried_points = sol.points
        t2 = time.perf_counter()
        if not sol.optimal:
            raise RecursiveFeasibilityBreach(self.step_index, sol.status.value)
        n_u = self.structure.n_u
        u = sol.u_seq[:n_u].copy()
        y_pred = problem.predicted_outputs(sol.u_seq)
        self.u_seq = sol.u_seq
        self.u_prev = u
        self.phi = advance_regressor(self.structure, self.phi, u)
        self.step_index += 1
        info = {
            "identify_s": t1 - t0,
            "solve_s": t2 - t1,
            "rounds": sol.iterations,
            "cuts": sol.cuts,
            "support_lps": sol.support_lps,
            "robust_violation": sol.max_violation,
        }
        return ControlDecision(u, sol.u_seq, y_pred, sol.status.value, sol.objective, info)
