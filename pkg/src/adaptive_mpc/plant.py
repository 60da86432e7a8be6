"""Three-tank benchmark: nonlinear physics, linearization and the truth simulator.

Levels are in cm, flows in cm^3/s, time in s. The closed-loop truth is the
time-varying linearization around the operating levels ``h_star``. By default
it is realized as an exact FIR system whose coefficients are the Markov
parameters of the discretized linearization at the current valve settings, so
the identifier's structural assumptions hold exactly. A state-space
realization is available for comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, DimensionError, ScheduleExhausted, SingularStructureError
from .model import ParameterMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TankParams:
    s_area: float = 375.0
    sc_area: float = 3.42
    gamma2: float = 0.5
    gravity: float = 981.0
    dt: float = 0.16
    input_scale: float = 1.0  # cm^3/s of flow per unit of controller input

    def __post_init__(self):
        for name in ("s_area", "sc_area", "gamma2", "gravity", "dt", "input_scale"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ConfigError(f"tank parameter {name} must be positive, got {val!r}")


def _signed_root(diff, gravity):
    return np.sign(diff) * np.sqrt(2.0 * gravity * abs(diff))


def tank_derivative(levels, q1: float, q2: float, gammas, params: TankParams) -> np.ndarray:
    """Level rates for inflows ``q1`` (tank 1) and ``q2`` (tank 3); ``gammas = (g1, g3)``."""
    h1, h2, h3 = np.asarray(levels, dtype=float)
    if min(h1, h2, h3) < 0:
        raise ValueError(f"levels must be nonnegative, got {(h1, h2, h3)}")
    g1, g3 = gammas
    sc, g = params.sc_area, params.gravity
    f12 = g1 * sc * _signed_root(h1 - h2, g)
    f23 = params.gamma2 * sc * _signed_root(h2 - h3, g)
    out = g3 * sc * np.sqrt(2.0 * g * h3)
    return np.array([q1 - f12, f12 - f23, q2 + f23 - out]) / params.s_area


def steady_inflows(h_star, gammas, params: TankParams, strict: bool = False) -> tuple[float, float]:
    """Inflows that zero the rates of tanks 1 and 3 at ``h_star``.

    Tank 2 has no inflow, so it balances only when the valve flows 1->2 and
    2->3 agree. With ``strict`` a nonzero residual rate in tank 2 is an error.
    """
    h1, h2, h3 = np.asarray(h_star, dtype=float)
    g1, g3 = gammas
    sc, g = params.sc_area, params.gravity
    f12 = g1 * sc * _signed_root(h1 - h2, g)
    f23 = params.gamma2 * sc * _signed_root(h2 - h3, g)
    q1 = f12
    q2 = g3 * sc * np.sqrt(2.0 * g * h3) - f23
    if strict and abs(f12 - f23) > 1e-10 * max(1.0, abs(f12)):
        raise ConfigError(f"h_star is not an equilibrium for gammas {tuple(gammas)}: tank 2 rate {(f12 - f23) / params.s_area:.3g}")
    return float(q1), float(q2)


def linearize(h_star, gammas, params: TankParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time Jacobians (A_c, B_c) of the level dynamics."""
    h1, h2, h3 = np.asarray(h_star, dtype=float)
    g1, g3 = gammas
    sc, s, g = params.sc_area, params.s_area, params.gravity
    if h1 == h2 or h2 == h3 or h3 <= 0:
        raise SingularStructureError("linearization needs distinct levels and a positive tank-3 level")
    d12 = g1 * sc * g / np.sqrt(2.0 * g * abs(h1 - h2))
    d23 = params.gamma2 * sc * g / np.sqrt(2.0 * g * abs(h2 - h3))
    d3 = g3 * sc * g / np.sqrt(2.0 * g * h3)
    a = np.array([
        [-d12, d12, 0.0],
        [d12, -d12 - d23, d23],
        [0.0, d23, -d23 - d3],
    ]) / s
    b = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]) / s
    return a, b


def discretize(a_c, b_c, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold discretization via the exponential of the augmented matrix."""
    a_c = np.atleast_2d(np.asarray(a_c, dtype=float))
    b_c = np.asarray(b_c, dtype=float)
    if b_c.ndim == 1:
        b_c = b_c[:, None]
    n, p = a_c.shape[0], b_c.shape[1]
    if a_c.shape != (n, n) or b_c.shape[0] != n:
        raise DimensionError("A_c must be square with as many rows as B_c")
    if dt <= 0:
        raise ValueError("dt must be positive")
    aug = np.zeros((n + p, n + p))
    aug[:n, :n] = a_c
    aug[:n, n:] = b_c
    e = sla.expm(aug * dt)
    return e[:n, :n], e[:n, n:]


def true_impulse_response(a_d, b_d, n_taps: int, c=None) -> ParameterMatrix:
    """Markov parameters ``C A^(k-1) B`` laid out as one block of taps per input."""
    a_d = np.atleast_2d(a_d)
    b_d = np.asarray(b_d, dtype=float)
    if b_d.ndim == 1:
        b_d = b_d[:, None]
    c = np.eye(a_d.shape[0]) if c is None else np.atleast_2d(c)
    n_u = b_d.shape[1]
    h = np.zeros((c.shape[0], n_u * n_taps))
    block = b_d.copy()
    for k in range(n_taps):
        markov = c @ block
        for i in range(n_u):
            h[:, i * n_taps + k] = markov[:, i]
        block = a_d @ block
    return ParameterMatrix(h)


@dataclass(frozen=True)
class ValveSchedule:
    """Piecewise-linear valve openings gamma1(time) and gamma3(time)."""

    times: tuple
    gamma1: tuple
    gamma3: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        g1 = np.asarray(self.gamma1, dtype=float)
        g3 = np.asarray(self.gamma3, dtype=float)
        if t.size == 0:
            raise ConfigError("valve schedule is empty")
        if not (t.shape == g1.shape == g3.shape):
            raise ConfigError("schedule arrays must have equal length")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ConfigError("schedule times must start at 0 and increase strictly")
        for g in (g1, g3):
            if np.any(g <= 0) or np.any(g > 1):
                raise ConfigError("valve openings must lie in (0, 1]")
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "gamma1", tuple(g1.tolist()))
        object.__setattr__(self, "gamma3", tuple(g3.tolist()))

    @property
    def end(self) -> float:
        return self.times[-1]

    def at(self, time: float) -> tuple[float, float]:
        if time < 0 or time > self.end * (1 + 1e-12) + 1e-12:
            raise ScheduleExhausted(f"time {time:.6g} s is outside the schedule [0, {self.end:.6g}] s")
        return float(np.interp(time, self.times, self.gamma1)), float(np.interp(time, self.times, self.gamma3))

    @classmethod
    def linear(cls, duration: float, g1=(0.40, 0.25), g3=(0.30, 0.45)) -> "ValveSchedule":
        return cls((0.0, float(duration)), tuple(g1), tuple(g3))


@dataclass
class TruthConfig:
    params: TankParams
    schedule: ValveSchedule
    h_star: tuple = (8.0, 7.0, 6.0)
    n_taps: int = 12
    eps_d: tuple = (0.1, 0.1, 0.1)
    eps_v: tuple = (0.1, 0.1, 0.1)
    mode: str = "fir"

    def __post_init__(self):
        if self.mode not in ("fir", "state_space"):
            raise ConfigError(f"unknown truth mode {self.mode!r}")
        if len(self.h_star) != 3 or min(self.h_star) <= 0:
            raise ConfigError("h_star must hold three positive levels")
        if np.any(np.asarray(self.eps_d) < 0) or np.any(np.asarray(self.eps_v) < 0):
            raise ConfigError("noise bounds must be nonnegative")


def discrete_model_at(cfg: TruthConfig, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Discretized linearization at the valve settings of sample ``step``; B in controller units."""
    gammas = cfg.schedule.at(step * cfg.params.dt)
    a_c, b_c = linearize(cfg.h_star, gammas, cfg.params)
    a_d, b_d = discretize(a_c, b_c, cfg.params.dt)
    return a_d, b_d * cfg.params.input_scale


def truth_parameters(cfg: TruthConfig, step: int) -> np.ndarray:
    a_d, b_d = discrete_model_at(cfg, step)
    return true_impulse_response(a_d, b_d, cfg.n_taps).h


@dataclass
class PlantState:
    """Truth simulator state at sample ``step`` (outputs are deviations from ``h_star``)."""

    step: int
    phi: np.ndarray
    x: np.ndarray
    y_true: np.ndarray
    y_meas: np.ndarray
    h_star: np.ndarray
    rng: np.random.Generator = field(repr=False)
    h_true: np.ndarray | None = None

    @property
    def levels(self) -> np.ndarray:
        lv = self.h_star + self.y_true
        if np.any(lv < 0):
            log.warning("step %d: negative level %s clamped to zero", self.step, lv)
            lv = np.maximum(lv, 0.0)
        return lv


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; the same seed reproduces the same noise stream."""
    return np.random.Generator(np.random.Philox(int(seed) % 2**64))


class ThreeTankPlant:
    def __init__(self, cfg: TruthConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        self.eps_d = np.asarray(cfg.eps_d, dtype=float)
        self.eps_v = np.asarray(cfg.eps_v, dtype=float)
        self.n_u = 2
        self.m = self.n_u * cfg.n_taps
        self._h_cache: dict[int, np.ndarray] = {}

    def truth_h(self, step: int) -> np.ndarray:
        if step not in self._h_cache:
            self._h_cache[step] = truth_parameters(self.cfg, step)
        return self._h_cache[step]

    def _observe(self, step, phi, x, rng):
        d = rng.uniform(-1.0, 1.0, 3) * self.eps_d
        v = rng.uniform(-1.0, 1.0, 3) * self.eps_v
        h = self.truth_h(step)
        if self.cfg.mode == "fir":
            y = h @ phi + d
        else:
            self.cfg.schedule.at(step * self.cfg.params.dt)
            y = x + d
        return PlantState(step, phi, x, y, y + v, np.asarray(self.cfg.h_star, dtype=float), rng, h)

    def reset(self) -> PlantState:
        """Steady state at sample 0: zero input history, fresh noise stream."""
        return self._observe(0, np.zeros(self.m), np.zeros(3), make_rng(self.seed))

    def step(self, state: PlantState, u) -> PlantState:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != self.n_u:
            raise DimensionError(f"input has length {u.size}, expected {self.n_u}")
        n = self.cfg.n_taps
        phi = state.phi.reshape(self.n_u, n)
        phi = np.hstack([u[:, None], phi[:, :-1]]).reshape(-1)
        x = state.x
        if self.cfg.mode == "state_space":
            a_d, b_d = discrete_model_at(self.cfg, state.step)
            x = a_d @ x + b_d @ u
        return self._observe(state.step + 1, phi, x, state.rng)


def simulate_step(plant: ThreeTankPlant, state: PlantState, u) -> tuple[np.ndarray, PlantState]:
    new = plant.step(state, u)
    return new.y_meas, new


def simulate_nonlinear(levels, q, gammas, params: TankParams, duration: float, substeps: int = 4) -> np.ndarray:
    """RK4 integration of the nonlinear level dynamics with constant inflows and valves."""
    h = np.asarray(levels, dtype=float).copy()
    n_steps = max(1, int(round(duration / params.dt)))
    dt = params.dt / substeps
    q1, q2 = q

    def rate(x):
        return tank_derivative(np.maximum(x, 0.0), q1, q2, gammas, params)

    for _ in range(n_steps * substeps):
        k1 = rate(h)
        k2 = rate(h + 0.5 * dt * k1)
        k3 = rate(h + 0.5 * dt * k2)
        k4 = rate(h + dt * k3)
        h = np.maximum(h + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), 0.0)
    return h


def exponential_overbound(values) -> np.ndarray:
    """Tightest (by sum) curve ``a * rho**k`` lying above ``values`` with rho in (0, 1]."""
    values = np.maximum(np.asarray(values, dtype=float), 0.0)
    k = np.arange(values.size)
    best, best_sum = values.copy(), np.inf
    for rho in np.linspace(0.05, 1.0, 96):
        curve = rho ** k
        a = np.max(values / curve)
        total = a * curve.sum()
        if total < best_sum:
            best, best_sum = a * curve, total
    return best


def design_bounds(cfg: TruthConfig, steps: int, omega_margin: float = 1.3, rate_margin: float = 1.5,
                  flat_taps: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Per-tap amplitude and rate bounds covering the truth over ``steps`` samples.

    The same bounds serve every input/output pair. Amplitudes get an
    exponential envelope; rates get one too, held flat over the first
    ``flat_taps`` coefficients.
    """
    n = cfg.n_taps
    hs = np.array([truth_parameters(cfg, t) for t in range(steps + 1)])
    per_tap = hs.reshape(steps + 1, 3, 2, n)
    amp = per_tap.max(axis=(0, 1, 2))
    omega = exponential_overbound(amp) * omega_margin
    if steps > 0:
        rate = np.abs(np.diff(per_tap, axis=0)).max(axis=(0, 1, 2))
    else:
        rate = np.zeros(n)
    rate_env = exponential_overbound(rate)
    if flat_taps > 0:
        rate_env[:flat_taps] = rate_env[:flat_taps].max()
    return omega, rate_env * rate_margin


def with_dt(params: TankParams, dt: float) -> TankParams:
    return replace(params, dt=dt)
