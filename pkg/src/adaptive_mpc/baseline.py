"""Certainty-equivalence comparison controller.

Parameters are tracked by exponentially weighted recursive least squares.
The controller solves the same tracking problem as the robust controller on
the point estimate, with hard input limits and output limits softened by an
L1-penalized slack. It has no terminal condition and no robustification.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import solvers
from .errors import DimensionError
from .model import ModelStructure, advance_regressor
from .robustmpc import ControlDecision, MpcConfig, input_limits, regressor_maps, shifted_hold, tracking_cost

log = logging.getLogger(__name__)


@dataclass
class RlsState:
    h_est: np.ndarray
    p_cov: np.ndarray
    forgetting: float

    def __post_init__(self):
        self.h_est = np.atleast_2d(np.asarray(self.h_est, dtype=float))
        self.p_cov = np.atleast_2d(np.asarray(self.p_cov, dtype=float))
        m = self.h_est.shape[1]
        if self.p_cov.shape != (m, m):
            raise DimensionError(f"covariance must be {m}x{m}, got {self.p_cov.shape}")
        if not 0.0 < self.forgetting <= 1.0:
            raise ValueError("forgetting factor must lie in (0, 1]")

    @classmethod
    def initial(cls, h0, p0: float = 1e3, forgetting: float = 0.9) -> "RlsState":
        h0 = np.atleast_2d(np.asarray(h0, dtype=float))
        return cls(h0.copy(), p0 * np.eye(h0.shape[1]), forgetting)


def rls_update(state: RlsState, phi, y_meas) -> RlsState:
    phi = np.asarray(phi, dtype=float).reshape(-1)
    y_meas = np.asarray(y_meas, dtype=float).reshape(-1)
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(y_meas))):
        raise ValueError("regressor and measurement must be finite")
    if phi.size != state.h_est.shape[1] or y_meas.size != state.h_est.shape[0]:
        raise DimensionError("regressor or measurement length does not match the estimate")
    lam = state.forgetting
    p_phi = state.p_cov @ phi
    gain = p_phi / (lam + phi @ p_phi)
    innovation = y_meas - state.h_est @ phi
    h = state.h_est + np.outer(innovation, gain)
    p = (state.p_cov - np.outer(gain, p_phi)) / lam
    p = 0.5 * (p + p.T)
    return RlsState(h, p, lam)


class BaselineController:
    def __init__(self, structure: ModelStructure, cfg: MpcConfig, h0, forgetting: float = 0.9, p0: float = 1e3,
                 rho: float | None = None):
        cfg.check_structure(structure)
        self.structure = structure
        self.cfg = cfg
        self.rls = RlsState.initial(h0, p0, forgetting)
        self.rho = 1e3 * float(np.max(cfg.q_weight)) if rho is None else float(rho)
        self.phi = structure.zero_regressor()
        self.u_prev = np.zeros(structure.n_u)
        self.u_seq: np.ndarray | None = None
        self.step_index = 0
        self.failures = 0

    def plan(self, h_est, y_meas, y_des_window) -> tuple[solvers.QuadraticProgram, np.ndarray]:
        """Soft-constrained QP in ``(U, s)`` and a feasible starting point."""
        cfg = self.cfg
        n, n_u, n_o = cfg.horizon, self.structure.n_u, cfg.n_o
        y_des = np.atleast_2d(np.asarray(y_des_window, dtype=float))
        phi_map = regressor_maps(self.structure, self.phi, n)
        d_hat = np.asarray(y_meas, dtype=float) - h_est @ self.phi
        hess, lin, const = tracking_cost(cfg, phi_map, h_est, d_hat, self.u_prev, y_des)
        a_in, b_in = input_limits(cfg, self.u_prev)
        nu, ns = n * n_u, n * n_o
        full_h = np.zeros((nu + ns, nu + ns))
        full_h[:nu, :nu] = hess
        full_lin = np.concatenate([lin, np.full(ns, self.rho)])
        out_rows = np.zeros((ns, nu + ns))
        out_rhs = np.zeros(ns)
        for i in range(n):
            blk = slice(i * n_o, (i + 1) * n_o)
            out_rows[blk, :nu] = cfg.cy_matrix @ h_est @ phi_map.mats[i]
            out_rows[blk, nu + i * n_o:nu + (i + 1) * n_o] = -np.eye(n_o)
            out_rhs[blk] = cfg.gy_vector - cfg.cy_matrix @ (h_est @ phi_map.offsets[i] + d_hat)
        ineq = np.vstack([np.hstack([a_in, np.zeros((a_in.shape[0], ns))]), out_rows,
                          np.hstack([np.zeros((ns, nu)), -np.eye(ns)])])
        rhs = np.concatenate([b_in, out_rhs, np.zeros(ns)])
        qp = solvers.QuadraticProgram(full_h, full_lin, ineq, rhs, constant=const)
        u0 = np.tile(self.u_prev, n) if self.u_seq is None else shifted_hold(self.u_seq, n_u)
        s0 = np.maximum(out_rows[:, :nu] @ u0 - out_rhs, 0.0)
        return qp, np.concatenate([u0, s0])

    def step(self, y_meas, y_des_window) -> ControlDecision:
        t0 = time.perf_counter()
        self.rls = rls_update(self.rls, self.phi, y_meas)
        h_est = self.rls.h_est
        qp, x0 = self.plan(h_est, y_meas, y_des_window)
        rep = solvers.solve_qp(qp, x0=x0)
        n, n_u = self.cfg.horizon, self.structure.n_u
        nu = n * n_u
        if rep.optimal:
            u_seq = rep.solution[:nu]
            slack = rep.solution[nu:]
        else:
            log.warning("baseline QP failed at step %d (%s); applying zero input", self.step_index, rep.status.value)
            self.failures += 1
            u_seq = np.zeros(nu)
            slack = np.zeros(n * self.cfg.n_o)
        u = u_seq[:n_u].copy()
        phi_map = regressor_maps(self.structure, self.phi, n)
        d_hat = np.asarray(y_meas, dtype=float) - h_est @ self.phi
        y_pred = phi_map.at(u_seq) @ h_est.T + d_hat
        self.u_seq = u_seq
        self.u_prev = u
        self.phi = advance_regressor(self.structure, self.phi, u)
        self.step_index += 1
        info = {"solve_s": time.perf_counter() - t0, "slack_max": float(slack.max(initial=0.0))}
        return ControlDecision(u, u_seq, y_pred, rep.status.value, rep.objective, info)
