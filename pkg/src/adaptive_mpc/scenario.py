"""Scenario files: JSON description of plant, bounds, controller tuning and reference.

Schema (all arrays are plain JSON lists)::

    {
      "name": str, "seed": int, "steps": int,
      "plant": {"s_area", "sc_area", "gamma2", "gravity", "dt", "input_scale",
                "h_star": [3], "truth": "fir" | "state_space"},
      "schedule": {"time": [..], "gamma1": [..], "gamma3": [..]},
      "noise": {"eps_d": [3], "eps_v": [3]},
      "model": {"n_taps": int},
      "bounds": {"omega_upper": [n_taps], "omega_lower": [n_taps] (optional, default 0),
                 "rate": [n_taps]},
      "controller": {"horizon", "m_cap", "q", "r", "s", "cu", "gu", "cdu", "gdu",
                     "cy", "gy", "infeasibility_policy"},
      "baseline": {"forgetting", "p0", "rho" (null for the default)},
      "reference": {"output": int, "levels": [..]}
    }

Amplitude and rate bounds are per tap and shared by every input/output pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import ModelStructure, build_fir_structure
from .plant import TankParams, TruthConfig, ValveSchedule, truth_parameters
from .robustmpc import MpcConfig
from .smident import NoiseBounds, PriorSet, RateBoundSet

N_U, N_Y = 2, 3


def _section(raw: dict, key: str) -> dict:
    if key not in raw or not isinstance(raw[key], dict):
        raise ConfigError(f"scenario is missing the '{key}' section")
    return raw[key]


@dataclass
class Scenario:
    name: str
    seed: int
    steps: int
    truth: TruthConfig
    omega_lower: np.ndarray
    omega_upper: np.ndarray
    rate_bounds: np.ndarray
    mpc: MpcConfig
    m_cap: int
    baseline: dict = field(default_factory=dict)
    reference_output: int = 1
    reference_levels: tuple = (0.0, 2.0, -1.0, 0.0)
    source: str | None = None

    @property
    def n_taps(self) -> int:
        return self.truth.n_taps

    def structure(self) -> ModelStructure:
        return build_fir_structure(N_U, N_Y, self.n_taps)

    def prior(self) -> PriorSet:
        return PriorSet.box(np.tile(self.omega_lower, N_U), np.tile(self.omega_upper, N_U), N_Y)

    def rates(self) -> RateBoundSet:
        return RateBoundSet.box(np.tile(self.rate_bounds, N_U), N_Y)

    def noise(self) -> NoiseBounds:
        return NoiseBounds(self.truth.eps_d, self.truth.eps_v)

    def reference(self, step: int, total_steps: int) -> np.ndarray:
        """Piecewise-constant reference: the level list is spread evenly over the run."""
        levels = self.reference_levels
        idx = min(len(levels) - 1, (step * len(levels)) // max(total_steps, 1))
        ref = np.zeros(N_Y)
        ref[self.reference_output] = levels[idx]
        return ref

    def reference_window(self, step: int, total_steps: int) -> np.ndarray:
        return np.tile(self.reference(step, total_steps), (self.mpc.horizon, 1))

    def max_steps(self) -> int:
        return int(np.floor(self.truth.schedule.end / self.truth.params.dt + 1e-9))


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario file {path} is not valid JSON: {exc}") from exc
    scen = scenario_from_dict(raw)
    scen.source = str(path)
    return scen


def scenario_from_dict(raw: dict) -> Scenario:
    plant = _section(raw, "plant")
    sched = _section(raw, "schedule")
    noise = _section(raw, "noise")
    model = _section(raw, "model")
    bounds = _section(raw, "bounds")
    ctrl = _section(raw, "controller")
    try:
        params = TankParams(
            s_area=float(plant.get("s_area", 375.0)),
            sc_area=float(plant.get("sc_area", 3.42)),
            gamma2=float(plant.get("gamma2", 0.5)),
            gravity=float(plant.get("gravity", 981.0)),
            dt=float(plant["dt"]),
            input_scale=float(plant.get("input_scale", 1.0)),
        )
        schedule = ValveSchedule(tuple(sched.get("time", ())), tuple(sched.get("gamma1", ())),
                                 tuple(sched.get("gamma3", ())))
        n_taps = int(model["n_taps"])
        truth = TruthConfig(params, schedule, tuple(plant.get("h_star", (8.0, 7.0, 6.0))), n_taps,
                            tuple(noise["eps_d"]), tuple(noise["eps_v"]), plant.get("truth", "fir"))
        upper = np.asarray(bounds["omega_upper"], dtype=float)
        lower = np.asarray(bounds.get("omega_lower", np.zeros(n_taps)), dtype=float)
        rate = np.asarray(bounds["rate"], dtype=float)
        mpc = MpcConfig(
            horizon=int(ctrl["horizon"]),
            q_weight=np.asarray(ctrl["q"], dtype=float),
            r_weight=np.asarray(ctrl["r"], dtype=float),
            s_weight=np.asarray(ctrl["s"], dtype=float),
            cu_matrix=np.asarray(ctrl["cu"], dtype=float),
            gu_vector=np.asarray(ctrl["gu"], dtype=float),
            cdu_matrix=np.asarray(ctrl["cdu"], dtype=float),
            gdu_vector=np.asarray(ctrl["gdu"], dtype=float),
            cy_matrix=np.asarray(ctrl["cy"], dtype=float),
            gy_vector=np.asarray(ctrl["gy"], dtype=float),
            infeasibility_policy=ctrl.get("infeasibility_policy", "fail_fast"),
        )
        m_cap = int(ctrl["m_cap"])
    except KeyError as exc:
        raise ConfigError(f"scenario is missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed scenario value: {exc}") from exc
    for name, arr in (("omega_upper", upper), ("omega_lower", lower), ("rate", rate)):
        if arr.shape != (n_taps,):
            raise ConfigError(f"bounds.{name} must have n_taps={n_taps} entries")
    if np.any(lower > upper) or np.any(rate < 0):
        raise ConfigError("bounds must satisfy lower <= upper and rate >= 0")
    ref = raw.get("reference", {})
    scen = Scenario(
        name=str(raw.get("name", "scenario")),
        seed=int(raw.get("seed", 0)),
        steps=int(raw.get("steps", 100)),
        truth=truth,
        omega_lower=lower,
        omega_upper=upper,
        rate_bounds=rate,
        mpc=mpc,
        m_cap=m_cap,
        baseline=dict(raw.get("baseline", {})),
        reference_output=int(ref.get("output", 1)),
        reference_levels=tuple(float(v) for v in ref.get("levels", (0.0, 2.0, -1.0, 0.0))),
    )
    if scen.steps < 1:
        raise ConfigError("steps must be at least 1")
    if not 0 <= scen.reference_output < N_Y:
        raise ConfigError("reference.output must index one of the three levels")
    if not scen.reference_levels:
        raise ConfigError("reference.levels must not be empty")
    mpc.check_structure(scen.structure())
    return scen


@dataclass
class ValidationReport:
    passed: bool
    steps: int
    omega_margins: np.ndarray
    rate_margins: np.ndarray
    first_failure: int | None
    message: str

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "steps": self.steps,
            "min_omega_margin": float(self.omega_margins.min()),
            "min_rate_margin": float(self.rate_margins.min()) if self.rate_margins.size else None,
            "first_failure": self.first_failure,
            "message": self.message,
        }


def validate_scenario(scen: Scenario, steps: int | None = None) -> ValidationReport:
    """Check the truth parameters against the prior set and the rate set at every step."""
    steps = scen.steps if steps is None else steps
    if steps > scen.max_steps():
        return ValidationReport(False, steps, np.zeros(1), np.zeros(0), None,
                                f"schedule covers {scen.max_steps()} steps, run needs {steps}")
    prior, rates = scen.prior(), scen.rates()
    hs = [truth_parameters(scen.truth, t) for t in range(steps + 1)]
    omega = np.array([prior.margin(h) for h in hs])
    rate = np.array([rates.margin(hs[t] - hs[t - 1]) for t in range(1, steps + 1)])
    bad = [t for t in range(steps + 1) if omega[t] < 0] + [t for t in range(1, steps + 1) if rate[t - 1] < 0]
    first = min(bad) if bad else None
    if first is None:
        msg = f"truth stays inside the prior and rate sets for {steps} steps"
    else:
        msg = f"truth leaves the prior or rate set first at step {first}"
    return ValidationReport(first is None, steps, omega, rate, first, msg)
