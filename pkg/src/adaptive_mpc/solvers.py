"""Dense linear and convex quadratic programming.

Everything here is a pure function of its inputs. Problem sizes in this
package are small to moderate (tens to a few hundred variables), so dense
linear algebra is used throughout.

Conventions
-----------
Inequalities are always written ``A x <= b``. Multipliers reported in
:class:`SolveReport` are nonnegative for inequality rows and satisfy

* minimize:  ``c + A^T lam + E^T nu = 0``
* maximize:  ``c = A^T lam + E^T nu``

so that in both cases the dual objective ``b^T lam + e^T nu`` (with the sign
of the sense) equals the primal optimum.
"""

from __future__ import annotations

import enum
import itertools
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, NotPSDError, UnboundedPolytopeError, EmptyPolytopeError

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
OPT_TOL = 1e-8
_PIVOT_TOL = 1e-9
_REFACTOR_EVERY = 50
_DEGENERATE_BEFORE_BLAND = 10


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


def _constraint_pair(mat, rhs, n, name):
    if mat is None and rhs is None:
        return np.zeros((0, n)), np.zeros(0)
    if mat is None or rhs is None:
        raise DimensionError(f"{name}: matrix and rhs must be given together")
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    rhs = np.asarray(rhs, dtype=float).reshape(-1)
    if mat.size == 0:
        mat = mat.reshape(0, n)
    if mat.shape[1] != n:
        raise DimensionError(f"{name}: matrix has {mat.shape[1]} columns, expected {n}")
    if mat.shape[0] != rhs.size:
        raise DimensionError(f"{name}: {mat.shape[0]} rows but rhs has length {rhs.size}")
    if not (np.all(np.isfinite(mat)) and np.all(np.isfinite(rhs))):
        raise ValueError(f"{name}: entries must be finite")
    return mat, rhs


@dataclass
class LinearProgram:
    """``min/max c^T x`` subject to ``A x <= b`` and ``E x = e``; x is free."""

    cost: np.ndarray
    ineq_matrix: np.ndarray | None = None
    ineq_rhs: np.ndarray | None = None
    eq_matrix: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    sense: str = "minimize"

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=float).reshape(-1)
        n = self.cost.size
        if not np.all(np.isfinite(self.cost)):
            raise ValueError("cost must be finite")
        self.ineq_matrix, self.ineq_rhs = _constraint_pair(self.ineq_matrix, self.ineq_rhs, n, "ineq")
        self.eq_matrix, self.eq_rhs = _constraint_pair(self.eq_matrix, self.eq_rhs, n, "eq")
        if self.sense not in ("minimize", "maximize"):
            raise ValueError(f"unknown sense {self.sense!r}")

    @property
    def n(self) -> int:
        return self.cost.size


@dataclass
class QuadraticProgram:
    """``min 0.5 x^T P x + q^T x + constant`` subject to ``A x <= b``, ``E x = e``."""

    hessian: np.ndarray
    linear: np.ndarray
    ineq_matrix: np.ndarray | None = None
    ineq_rhs: np.ndarray | None = None
    eq_matrix: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    constant: float = 0.0

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float).reshape(-1)
        n = self.linear.size
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        if self.hessian.shape != (n, n):
            raise DimensionError(f"hessian shape {self.hessian.shape} does not match n={n}")
        if not (np.all(np.isfinite(self.hessian)) and np.all(np.isfinite(self.linear))):
            raise ValueError("hessian and linear term must be finite")
        scale = max(1.0, np.abs(self.hessian).max(initial=0.0))
        if np.abs(self.hessian - self.hessian.T).max(initial=0.0) > 1e-12 * scale:
            raise NotPSDError("hessian is not symmetric")
        self.hessian = 0.5 * (self.hessian + self.hessian.T)
        if n and np.linalg.eigvalsh(self.hessian)[0] < -1e-9:
            raise NotPSDError("hessian has a negative eigenvalue")
        self.ineq_matrix, self.ineq_rhs = _constraint_pair(self.ineq_matrix, self.ineq_rhs, n, "ineq")
        self.eq_matrix, self.eq_rhs = _constraint_pair(self.eq_matrix, self.eq_rhs, n, "eq")

    @property
    def n(self) -> int:
        return self.linear.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.linear @ x + self.constant)


@dataclass
class SolveReport:
    status: Status
    solution: np.ndarray
    objective: float
    dual_ineq: np.ndarray
    dual_eq: np.ndarray
    iterations: int = 0
    certificate: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _split_zero_rows(mat, rhs, tol, kind):
    """Drop all-zero rows. Returns kept index array, or None if a row is contradictory."""
    if mat.shape[0] == 0:
        return np.arange(0), None
    zero = ~np.any(np.abs(mat) > 0.0, axis=1)
    if not zero.any():
        return np.arange(mat.shape[0]), None
    bad = zero & ((rhs < -tol) if kind == "ineq" else (np.abs(rhs) > tol))
    if bad.any():
        return None, int(np.flatnonzero(bad)[0])
    if kind == "ineq":
        warnings.warn(f"dropping {int(zero.sum())} all-zero inequality row(s)", stacklevel=3)
    return np.flatnonzero(~zero), None


# --------------------------------------------------------------------------
# Revised simplex on standard form  min c^T z, M z = r, z >= 0
# --------------------------------------------------------------------------


class _Simplex:
    def __init__(self, mat, rhs, basis, tol, max_iter):
        self.mat = mat
        self.rhs = rhs
        self.basis = np.array(basis, dtype=int)
        self.tol = tol
        self.max_iter = max_iter
        self.iterations = 0
        self.refactor()

    def refactor(self):
        self.binv = np.linalg.inv(self.mat[:, self.basis])
        self.xb = self.binv @ self.rhs
        self.xb[np.abs(self.xb) < 1e-13] = 0.0

    def duals(self, cost):
        return cost[self.basis] @ self.binv

    def run(self, cost, allowed):
        """Optimize from the current (feasible) basis. Returns a Status."""
        degenerate = 0
        since_refactor = 0
        candidates_mask = allowed.copy()
        while True:
            if self.iterations >= self.max_iter:
                return Status.ITERATION_LIMIT
            y = self.duals(cost)
            reduced = cost - y @ self.mat
            mask = candidates_mask.copy()
            mask[self.basis] = False
            scale = 1.0 + np.abs(cost).max(initial=0.0)
            neg = np.flatnonzero(mask & (reduced < -self.tol * scale))
            if neg.size == 0:
                return Status.OPTIMAL
            bland = degenerate >= _DEGENERATE_BEFORE_BLAND
            q = int(neg[0]) if bland else int(neg[np.argmin(reduced[neg])])
            w = self.binv @ self.mat[:, q]
            rows = np.flatnonzero(w > _PIVOT_TOL)
            if rows.size == 0:
                self.unbounded_column = q
                return Status.UNBOUNDED
            xb = np.maximum(self.xb[rows], 0.0)
            ratios = xb / w[rows]
            theta = ratios.min()
            ties = rows[ratios <= theta + 1e-12 * (1.0 + theta)]
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(w[ties])])
            # pivot
            self.xb -= theta * w
            self.xb[r] = theta
            pivot_row = self.binv[r] / w[r]
            self.binv -= np.outer(w, pivot_row)
            self.binv[r] = pivot_row
            self.basis[r] = q
            self.iterations += 1
            since_refactor += 1
            degenerate = degenerate + 1 if theta <= 1e-12 else 0
            if since_refactor >= _REFACTOR_EVERY:
                self.refactor()
                since_refactor = 0


def _verify_farkas(a_in, b_in, a_eq, b_eq, lam, nu, tol):
    scale = max(np.abs(lam).max(initial=0.0), np.abs(nu).max(initial=0.0))
    if scale <= 0.0:
        return False
    lam = lam / scale
    nu = nu / scale
    if lam.size and lam.min() < -1e-10:
        return False
    combo = a_in.T @ lam + a_eq.T @ nu
    gap = b_in @ lam + b_eq @ nu
    mag = 1.0 + np.abs(a_in).max(initial=0.0) + np.abs(a_eq).max(initial=0.0)
    return bool(np.abs(combo).max(initial=0.0) <= 1e3 * tol * mag and gap < -tol)


def solve_lp(lp: LinearProgram, tol: float = FEAS_TOL, max_iter: int | None = None) -> SolveReport:
    """Two-phase revised simplex with Dantzig pricing and Bland's rule on degeneracy."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = lp.n
    a_full, b_full = lp.ineq_matrix, lp.ineq_rhs
    e_full, f_full = lp.eq_matrix, lp.eq_rhs
    p_full, q_full = a_full.shape[0], e_full.shape[0]
    cost = lp.cost if lp.sense == "minimize" else -lp.cost

    def empty_report(status, cert=None):
        return SolveReport(status, np.full(n, np.nan), np.nan, np.zeros(p_full), np.zeros(q_full), 0, cert)

    keep_in, bad = _split_zero_rows(a_full, b_full, tol, "ineq")
    if keep_in is None:
        lam = np.zeros(p_full)
        lam[bad] = 1.0
        return empty_report(Status.INFEASIBLE, (lam, np.zeros(q_full)))
    keep_eq, bad = _split_zero_rows(e_full, f_full, tol, "eq")
    if keep_eq is None:
        nu = np.zeros(q_full)
        nu[bad] = -np.sign(f_full[bad])
        return empty_report(Status.INFEASIBLE, (np.zeros(p_full), nu))

    a, b = a_full[keep_in], b_full[keep_in]
    e, f = e_full[keep_eq], f_full[keep_eq]
    p, q = a.shape[0], e.shape[0]
    rows = p + q
    if rows == 0:
        if np.any(cost != 0.0):
            return empty_report(Status.UNBOUNDED)
        return SolveReport(Status.OPTIMAL, np.zeros(n), 0.0, np.zeros(p_full), np.zeros(q_full), 0)

    sign = np.ones(rows)
    rhs = np.concatenate([b, f])
    sign[rhs < 0] = -1.0
    core = np.vstack([np.hstack([a, -a]), np.hstack([e, -e])])
    slack = np.vstack([np.eye(p), np.zeros((q, p))])
    needs_art = np.flatnonzero((sign < 0) | (np.arange(rows) >= p))
    art = np.zeros((rows, needs_art.size))
    art[needs_art, np.arange(needs_art.size)] = 1.0
    mat = np.hstack([core, slack, art * sign[:, None]]) * sign[:, None]
    rhs = rhs * sign
    n_core = 2 * n + p
    n_cols = n_core + needs_art.size
    basis = np.empty(rows, dtype=int)
    basis[:p] = n * 2 + np.arange(p)
    basis[needs_art] = n_core + np.arange(needs_art.size)
    if max_iter is None:
        max_iter = 50 * (rows + n_cols) + 100

    simplex = _Simplex(mat, rhs, basis, tol, max_iter)
    row_ids = np.arange(rows)
    if needs_art.size:
        c1 = np.zeros(n_cols)
        c1[n_core:] = 1.0
        status = simplex.run(c1, np.ones(n_cols, dtype=bool))
        if status is Status.ITERATION_LIMIT:
            return empty_report(status)
        simplex.refactor()
        infeas = float(c1[simplex.basis] @ simplex.xb)
        if infeas > tol * (1.0 + np.abs(rhs).max()):
            y = simplex.duals(c1) * sign
            lam_k, nu_k = -y[:p], -y[p:]
            lam = np.zeros(p_full)
            lam[keep_in] = lam_k
            nu = np.zeros(q_full)
            nu[keep_eq] = nu_k
            if _verify_farkas(a_full, b_full, e_full, f_full, lam, nu, tol):
                return SolveReport(Status.INFEASIBLE, np.full(n, np.nan), np.nan,
                                   np.zeros(p_full), np.zeros(q_full), simplex.iterations, (lam, nu))
            log.warning("phase 1 infeasibility %.3e without a verifiable certificate", infeas)
            return empty_report(Status.ITERATION_LIMIT)
        # drive zero-level artificials out of the basis; drop redundant rows
        redundant = []
        for r in range(rows):
            if simplex.basis[r] < n_core:
                continue
            row = simplex.binv[r] @ mat[:, :n_core]
            row[simplex.basis[simplex.basis < n_core]] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-9:
                w = simplex.binv @ mat[:, j]
                pivot_row = simplex.binv[r] / w[r]
                simplex.binv -= np.outer(w, pivot_row)
                simplex.binv[r] = pivot_row
                simplex.basis[r] = j
            else:
                redundant.append(r)
        if redundant:
            keep_rows = np.setdiff1d(np.arange(rows), redundant)
            mat = mat[keep_rows]
            rhs = rhs[keep_rows]
            row_ids = row_ids[keep_rows]
            simplex.mat = mat
            simplex.rhs = rhs
            simplex.basis = simplex.basis[keep_rows]
        simplex.refactor()

    c2 = np.zeros(n_cols)
    c2[:n] = cost
    c2[n:2 * n] = -cost
    allowed = np.zeros(n_cols, dtype=bool)
    allowed[:n_core] = True
    status = simplex.run(c2, allowed)
    if status is not Status.OPTIMAL:
        return empty_report(status)
    simplex.refactor()

    z = np.zeros(n_cols)
    z[simplex.basis] = simplex.xb
    x = z[:n] - z[n:2 * n]
    y = np.zeros(rows)
    y[row_ids] = simplex.duals(c2) * sign[row_ids]
    lam = np.zeros(p_full)
    lam[keep_in] = np.maximum(-y[:p], 0.0)
    nu = np.zeros(q_full)
    nu[keep_eq] = -y[p:]
    objective = float(lp.cost @ x)
    report = SolveReport(Status.OPTIMAL, x, objective, lam, nu, simplex.iterations)
    if not _certify_lp(lp, report, tol):
        log.warning("LP optimality certificate failed after %d iterations", simplex.iterations)
        report.status = Status.ITERATION_LIMIT
    return report


def _certify_lp(lp, report, tol):
    x, lam, nu = report.solution, report.dual_ineq, report.dual_eq
    a, b, e, f = lp.ineq_matrix, lp.ineq_rhs, lp.eq_matrix, lp.eq_rhs
    scale = 1.0 + np.abs(x).max(initial=0.0)
    mag = 1.0 + max(np.abs(a).max(initial=0.0), np.abs(e).max(initial=0.0))
    slack = b - a @ x
    if slack.size and slack.min() < -tol * scale * mag * 10:
        return False
    if f.size and np.abs(e @ x - f).max() > tol * scale * mag * 10:
        return False
    c = lp.cost if lp.sense == "maximize" else -lp.cost
    stat = a.T @ lam + e.T @ nu - c
    dual_scale = 1.0 + np.abs(lam).max(initial=0.0) + np.abs(nu).max(initial=0.0)
    if np.abs(stat).max(initial=0.0) > 1e2 * tol * dual_scale * mag:
        return False
    comp = np.abs(lam * slack)
    return not (comp.size and comp.max() > 1e2 * tol * dual_scale * scale * mag)


# --------------------------------------------------------------------------
# Primal active-set QP with null-space steps
# --------------------------------------------------------------------------


def _independent_rows(mat, tol=1e-10):
    """Indices of a maximal linearly independent subset of rows (greedy, in order)."""
    if mat.shape[0] == 0:
        return np.arange(0)
    _, r, piv = sla.qr(mat.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * max(1.0, diag.max(initial=0.0))))
    return np.sort(piv[:rank])


def _null_space(aw, n):
    if aw.shape[0] == 0:
        return np.eye(n)
    qmat, _ = np.linalg.qr(aw.T, mode="complete")
    return qmat[:, aw.shape[0]:]


def solve_qp(qp: QuadraticProgram, tol: float = OPT_TOL, x0=None, max_iter: int | None = None) -> SolveReport:
    """Primal active-set method. ``x0`` is used as a starting point when feasible."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = qp.n
    a_full, b_full = qp.ineq_matrix, qp.ineq_rhs
    e_full, f_full = qp.eq_matrix, qp.eq_rhs
    p_full, q_full = a_full.shape[0], e_full.shape[0]

    def fail(status, cert=None, iterations=0):
        return SolveReport(status, np.full(n, np.nan), np.nan, np.zeros(p_full), np.zeros(q_full), iterations, cert)

    keep_in, bad = _split_zero_rows(a_full, b_full, tol, "ineq")
    if keep_in is None:
        lam = np.zeros(p_full)
        lam[bad] = 1.0
        return fail(Status.INFEASIBLE, (lam, np.zeros(q_full)))
    a, b = a_full[keep_in], b_full[keep_in]
    eq_idx = _independent_rows(e_full) if q_full else np.arange(0)
    e, f = e_full[eq_idx], f_full[eq_idx]

    x = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.size != n:
            raise DimensionError("x0 has wrong length")
        viol = max((a @ x0 - b).max(initial=0.0), np.abs(e_full @ x0 - f_full).max(initial=0.0))
        if viol <= tol * (1.0 + np.abs(x0).max(initial=0.0)):
            x = x0.copy()
    if x is None:
        phase1 = solve_lp(LinearProgram(np.zeros(n), a_full, b_full, e_full, f_full), tol)
        if phase1.status is Status.INFEASIBLE:
            return fail(Status.INFEASIBLE, phase1.certificate, phase1.iterations)
        if phase1.status is not Status.OPTIMAL:
            return fail(phase1.status, None, phase1.iterations)
        x = phase1.solution.copy()
    if q_full:
        resid = np.abs(e_full @ x - f_full).max()
        if resid > 1e3 * tol * (1.0 + np.abs(x).max()):
            return fail(Status.INFEASIBLE)

    p, q = a.shape[0], e.shape[0]
    if max_iter is None:
        max_iter = 20 * (n + p) + 100
    hess, lin = qp.hessian, qp.linear
    xscale = lambda v: 1.0 + np.abs(v).max(initial=0.0)  # noqa: E731

    # initial working set: independent active inequalities
    working: list[int] = []
    if p:
        act = np.flatnonzero(np.abs(a @ x - b) <= tol * xscale(x))
        rows = e
        for i in act:
            trial = np.vstack([rows, a[i]])
            if trial.shape[0] <= n and _independent_rows(trial).size == trial.shape[0]:
                rows = trial
                working.append(int(i))

    iterations = 0
    degenerate = 0
    status = Status.ITERATION_LIMIT
    mu_w = np.zeros(0)
    while iterations < max_iter:
        iterations += 1
        aw = np.vstack([e, a[working]]) if working else e
        grad = hess @ x + lin
        z = _null_space(aw, n)
        step = np.zeros(n)
        ray = False
        if z.shape[1]:
            hz = z.T @ hess @ z
            gz = z.T @ grad
            evals, evecs = np.linalg.eigh(hz)
            thr = 1e-10 * max(1.0, evals.max(initial=0.0))
            coeff = evecs.T @ gz
            flat = evals <= thr
            zero_curv = evecs[:, flat] @ coeff[flat]
            if np.linalg.norm(zero_curv) > tol * (1.0 + np.linalg.norm(grad)):
                step = -z @ zero_curv
                ray = True
            else:
                v = -evecs[:, ~flat] @ (coeff[~flat] / evals[~flat])
                step = z @ v
        if not ray and np.abs(step).max(initial=0.0) <= 1e-12 * xscale(x):
            # stationary on the working set: check multipliers
            if aw.shape[0]:
                mu_w, *_ = np.linalg.lstsq(aw.T, -grad, rcond=None)
            else:
                mu_w = np.zeros(0)
            mu_in = mu_w[q:]
            if mu_in.size == 0 or mu_in.min() >= -tol * (1.0 + np.abs(grad).max()):
                status = Status.OPTIMAL
                break
            if degenerate >= _DEGENERATE_BEFORE_BLAND:
                drop = int(np.flatnonzero(mu_in < -tol)[0]) if np.any(mu_in < -tol) else int(np.argmin(mu_in))
            else:
                drop = int(np.argmin(mu_in))
            working.pop(drop)
            continue
        # ratio test along step
        alpha = np.inf if ray else 1.0
        block = -1
        if p:
            ap = a @ step
            mask = ap > _PIVOT_TOL * (1.0 + np.abs(step).max())
            if working:
                mask[working] = False
            cand = np.flatnonzero(mask)
            if cand.size:
                slack = np.maximum(b[cand] - a[cand] @ x, 0.0)
                ratios = slack / ap[cand]
                k = int(np.argmin(ratios))
                if ratios[k] < alpha:
                    alpha = float(ratios[k])
                    block = int(cand[k])
        if not np.isfinite(alpha):
            status = Status.UNBOUNDED
            break
        x = x + alpha * step
        degenerate = degenerate + 1 if alpha <= 1e-14 else 0
        if block >= 0:
            working.append(block)

    if status is not Status.OPTIMAL:
        return fail(status, None, iterations)
    lam = np.zeros(p_full)
    if working:
        lam_k = np.zeros(p)
        lam_k[working] = np.maximum(mu_w[q:], 0.0)
        lam[keep_in] = lam_k
    nu = np.zeros(q_full)
    nu[eq_idx] = mu_w[:q]
    return SolveReport(Status.OPTIMAL, x, qp.objective(x), lam, nu, iterations)


def kkt_residuals(qp: QuadraticProgram, report: SolveReport) -> dict[str, float]:
    """Stationarity, primal feasibility, dual feasibility and complementarity residuals."""
    x, lam, nu = report.solution, report.dual_ineq, report.dual_eq
    a, b, e, f = qp.ineq_matrix, qp.ineq_rhs, qp.eq_matrix, qp.eq_rhs
    grad = qp.hessian @ x + qp.linear
    slack = b - a @ x
    return {
        "stationarity": float(np.abs(grad + a.T @ lam + e.T @ nu).max(initial=0.0)),
        "primal": float(max((-slack).max(initial=0.0), np.abs(e @ x - f).max(initial=0.0))),
        "dual": float((-lam).max(initial=0.0)),
        "complementarity": float(np.abs(lam * slack).max(initial=0.0)),
    }


# --------------------------------------------------------------------------
# Polytope helpers
# --------------------------------------------------------------------------


@dataclass
class PolytopeMax:
    """Result of maximizing ``w^T x`` over ``{x : A x <= b}``.

    ``multipliers`` has one entry per row of A, is nonnegative, and satisfies
    ``A^T multipliers = w`` and ``b^T multipliers = value``.
    """

    value: float
    point: np.ndarray
    multipliers: np.ndarray
    basis: np.ndarray
    iterations: int


def _crash_to_vertex(a, b, w, x, usable):
    n = a.shape[1]
    working: list[int] = []
    x = x.astype(float).copy()
    for _ in range(n):
        z = _null_space(a[working], n) if working else np.eye(n)
        d = z @ (z.T @ w)
        if np.linalg.norm(d) <= 1e-12 * (1.0 + np.linalg.norm(w)):
            d = z[:, 0]
        ad = a @ d
        mask = usable & (ad > _PIVOT_TOL * np.linalg.norm(d))
        mask[working] = False
        cand = np.flatnonzero(mask)
        if cand.size == 0:
            d = -d
            ad = -ad
            mask = usable & (ad > _PIVOT_TOL * np.linalg.norm(d))
            mask[working] = False
            cand = np.flatnonzero(mask)
            if cand.size == 0:
                raise UnboundedPolytopeError("polytope is unbounded")
        slack = np.maximum(b[cand] - a[cand] @ x, 0.0)
        ratios = slack / ad[cand]
        best = ratios.min()
        ties = cand[ratios <= best + 1e-12 * (1.0 + best)]
        i = int(ties[np.argmax(ad[ties])])
        x = x + best * d
        working.append(i)
    basis = np.array(working, dtype=int)
    return np.linalg.solve(a[basis], b[basis]), basis


def _dual_repair(a, b, w, basis, inv, usable, feas_tol, tol, max_iter: int = 50):
    """Dual simplex from a basis that is dual feasible for ``w`` but cuts off too little.

    Returns ``(x, basis)`` at a feasible vertex, or None when the start is not
    dual feasible or the pivots do not settle quickly.
    """
    wscale = 1.0 + np.abs(w).max(initial=0.0)
    mu = inv.T @ w
    if np.any(mu < -tol * wscale):
        return None
    basis = basis.copy()
    x = inv @ b[basis]
    for _ in range(max_iter):
        excess = a @ x - b
        excess[~usable] = -np.inf
        excess[basis] = -np.inf
        r = int(np.argmax(excess))
        if excess[r] <= feas_tol:
            return x, basis
        alpha = inv.T @ a[r]
        pos = np.flatnonzero(alpha > _PIVOT_TOL * (1.0 + np.abs(alpha).max()))
        if pos.size == 0:
            return None
        ratios = np.maximum(mu[pos], 0.0) / alpha[pos]
        k = int(pos[np.argmin(ratios)])
        step = ratios.min()
        mu = mu - step * alpha
        mu[k] = step
        basis[k] = r
        row = a[r] @ inv
        row[k] -= 1.0
        inv = inv - np.outer(inv[:, k], row) / (row[k] + 1.0)
        x = inv @ b[basis]
    return None


def maximize_over_polytope(a, b, w, start=None, basis=None, tol: float = 1e-10,
                           max_iter: int | None = None) -> PolytopeMax:
    """Vertex-walking simplex for ``max w^T x`` over a bounded polytope.

    Warm starts from ``basis`` (row indices of a previous optimal vertex) when
    that vertex is feasible for ``b``; otherwise walks to a vertex from the
    feasible point ``start`` (or one found by LP).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w = np.asarray(w, dtype=float)
    rows, n = a.shape
    usable = np.any(a != 0.0, axis=1)
    bscale = 1.0 + np.abs(b).max(initial=0.0)
    x = None
    if basis is not None and len(basis) == n:
        basis = np.array(basis, dtype=int)
        try:
            inv0 = np.linalg.inv(a[basis])
        except np.linalg.LinAlgError:
            inv0 = None
        if inv0 is not None:
            xb = inv0 @ b[basis]
            if (a @ xb - b).max() <= 1e-9 * bscale:
                x = xb
            else:
                repaired = _dual_repair(a, b, w, basis, inv0, usable, 1e-9 * bscale, tol)
                if repaired is not None:
                    x, basis = repaired
    if x is None:
        if start is None:
            start = feasible_point(a, b)
        x, basis = _crash_to_vertex(a, b, w, np.asarray(start, dtype=float), usable)
    if max_iter is None:
        max_iter = 20 * (rows + n) + 100
    wscale = 1.0 + np.abs(w).max(initial=0.0)
    degenerate = 0
    iterations = 0
    since_refactor = 0
    in_basis = np.zeros(rows, dtype=bool)
    inv = np.linalg.inv(a[basis])
    while True:
        mu = inv.T @ w
        neg = np.flatnonzero(mu < -tol * wscale)
        if neg.size == 0:
            if since_refactor == 0:
                break
            # certify with a fresh factorization before stopping
            inv = np.linalg.inv(a[basis])
            x = inv @ b[basis]
            since_refactor = 0
            continue
        if iterations >= max_iter:
            raise RuntimeError("vertex walk did not converge")
        bland = degenerate >= _DEGENERATE_BEFORE_BLAND
        k = int(neg[np.argmin(basis[neg])]) if bland else int(neg[np.argmin(mu[neg])])
        d = -inv[:, k]
        ad = a @ d
        in_basis[:] = False
        in_basis[basis] = True
        mask = usable & ~in_basis & (ad > _PIVOT_TOL * (1.0 + np.abs(d).max()))
        cand = np.flatnonzero(mask)
        if cand.size == 0:
            raise UnboundedPolytopeError("objective is unbounded over the polytope")
        slack = np.maximum(b[cand] - a[cand] @ x, 0.0)
        ratios = slack / ad[cand]
        best = ratios.min()
        ties = cand[ratios <= best + 1e-12 * (1.0 + best)]
        enter = int(ties.min()) if bland else int(ties[np.argmax(ad[ties])])
        basis = basis.copy()
        basis[k] = enter
        since_refactor += 1
        if since_refactor >= 25:
            inv = np.linalg.inv(a[basis])
            since_refactor = 0
        else:
            row = a[enter] @ inv
            row[k] -= 1.0
            inv = inv - np.outer(inv[:, k], row) / (row[k] + 1.0)
        x = inv @ b[basis]
        degenerate = degenerate + 1 if best <= 1e-13 else 0
        iterations += 1
    multipliers = np.zeros(rows)
    np.add.at(multipliers, basis, np.maximum(mu, 0.0))
    return PolytopeMax(float(w @ x), x, multipliers, basis, iterations)


def feasible_point(a, b, tol: float = FEAS_TOL) -> np.ndarray:
    """Some point of ``{x : A x <= b}``; raises EmptyPolytopeError if there is none."""
    a = np.asarray(a, dtype=float)
    rep = solve_lp(LinearProgram(np.zeros(a.shape[1]), a, b), tol)
    if rep.status is Status.INFEASIBLE:
        raise EmptyPolytopeError("polytope is empty")
    if not rep.optimal:
        raise RuntimeError(f"feasibility LP failed: {rep.status}")
    return rep.solution


def chebyshev_center(a, b, tol: float = FEAS_TOL) -> tuple[np.ndarray, float]:
    """Center and radius of the largest inscribed ball."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[1]
    norms = np.linalg.norm(a, axis=1)
    ineq = np.vstack([np.hstack([a, norms[:, None]]), np.hstack([np.zeros(n), -1.0])])
    rhs = np.concatenate([b, [0.0]])
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    rep = solve_lp(LinearProgram(cost, ineq, rhs, sense="maximize"), tol)
    if rep.status is Status.INFEASIBLE:
        raise EmptyPolytopeError("polytope is empty")
    if rep.status is Status.UNBOUNDED:
        raise UnboundedPolytopeError("polytope contains arbitrarily large balls")
    if not rep.optimal:
        raise RuntimeError(f"Chebyshev LP failed: {rep.status}")
    return rep.solution[:n], float(rep.solution[n])


def analytic_center(a, b, start, iters: int = 100) -> np.ndarray:
    """Damped Newton on ``-sum log(b - A x)`` from a strictly interior start."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(start, dtype=float).copy()
    keep = np.any(a != 0.0, axis=1)
    a, b = a[keep], b[keep]
    for _ in range(iters):
        s = b - a @ x
        if s.min() <= 0:
            raise ValueError("start is not strictly interior")
        g = a.T @ (1.0 / s)
        h = (a / s[:, None] ** 2).T @ a
        dx = -np.linalg.solve(h, g)
        dec = float(-g @ dx)
        if dec < 1e-20:
            break
        t = 1.0
        while (b - a @ (x + t * dx)).min() <= 0:
            t *= 0.5
        x = x + t / (1.0 + np.sqrt(dec)) * dx if dec > 0.25 else x + t * dx
    return x


def check_bounded(a, b, tol: float = FEAS_TOL) -> None:
    """Raise UnboundedPolytopeError unless every coordinate is bounded above and below."""
    a = np.asarray(a, dtype=float)
    n = a.shape[1]
    for i in range(n):
        for sgn in (1.0, -1.0):
            c = np.zeros(n)
            c[i] = sgn
            rep = solve_lp(LinearProgram(c, a, b, sense="maximize"), tol)
            if rep.status is Status.UNBOUNDED:
                raise UnboundedPolytopeError(f"polytope unbounded along {'+' if sgn > 0 else '-'}e{i}")
            if rep.status is Status.INFEASIBLE:
                raise EmptyPolytopeError("polytope is empty")


def enumerate_vertices(a, b, tol: float = 1e-9) -> list[np.ndarray]:
    """All vertices of a bounded polytope in dimension <= 6, by brute force."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.ndim != 2 or a.shape[0] != b.size:
        raise DimensionError("matrix/rhs mismatch")
    n = a.shape[1]
    if n > 6:
        raise ValueError("vertex enumeration is limited to n <= 6")
    check_bounded(a, b)
    found: list[np.ndarray] = []
    for combo in itertools.combinations(range(a.shape[0]), n):
        sub = a[list(combo)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, b[list(combo)])
        if (a @ v - b).max() > tol * (1.0 + np.abs(b).max()):
            continue
        if any(np.abs(v - u).max() <= tol for u in found):
            continue
        found.append(v)
    found.sort(key=lambda v: tuple(np.round(v, 12)))
    return found
