"""Closed-loop runs with per-step logging and invariant audits."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import smident, solvers
from .baseline import BaselineController
from .errors import EmptyFeasibleSet, RecursiveFeasibilityBreach
from .plant import ThreeTankPlant
from .robustmpc import AdaptiveController, PredictedFpsSequence, output_envelope
from .scenario import N_Y, Scenario

log = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-9
CANDIDATE_TOL = 1e-7
NESTED_TOL = 1e-9
ENVELOPE_TOL = 1e-6


@dataclass
class AuditOptions:
    enabled: bool = False
    candidate_samples: int = 20
    nested_samples: int = 20


@dataclass
class RunResult:
    controller: str
    rows: list
    audit: dict
    steps_completed: int
    fps_snapshots: dict = field(default_factory=dict)

    @property
    def output_violations(self) -> int:
        return int(self.audit["output_violations"])


def _sample_steps(steps: int, count: int, first: int = 1) -> set[int]:
    if count <= 0 or steps <= first:
        return set()
    return {int(v) for v in np.unique(np.linspace(first, steps - 1, count).round())}


def containment_violation(outer: list, inner: list, start=None) -> float:
    """Largest amount by which ``inner`` sticks out of ``outer`` (per-output polytope lists)."""
    worst = -np.inf
    for j, ((a_out, b_out), (a_in, b_in)) in enumerate(zip(outer, inner)):
        s = None if start is None else start[j]
        basis = None
        for row, rhs in zip(a_out, b_out):
            if not np.any(row):
                worst = max(worst, -rhs)
                continue
            res = solvers.maximize_over_polytope(a_in, b_in, row, start=s, basis=basis)
            basis = res.basis
            worst = max(worst, res.value - rhs)
    return float(worst)


def nestedness_violation(prev: PredictedFpsSequence, cur: PredictedFpsSequence, offset: int, start=None) -> float:
    """Containment of ``F(k|t+1)`` in ``F(k|t)`` for the step ``k = t + 1 + offset``.

    ``prev`` is the sequence built at t and ``cur`` the one built at t+1;
    ``offset`` ranges over 1..N-1.
    """
    return containment_violation(prev.sets[offset], cur.sets[offset - 1], start)


def _summary(values) -> dict:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"count": 0}
    return {"count": int(arr.size), "mean": float(arr.mean()), "max": float(arr.max()), "total": float(arr.sum())}


def run_closed_loop(scen: Scenario, controller: str, steps: int | None = None, seed: int | None = None,
                    audit: AuditOptions | None = None, method: str = "cutting_plane") -> RunResult:
    steps = scen.steps if steps is None else int(steps)
    seed = scen.seed if seed is None else int(seed)
    audit = audit or AuditOptions()
    structure = scen.structure()
    prior = scen.prior()
    noise = scen.noise()
    plant = ThreeTankPlant(scen.truth, seed)
    cfg = scen.mpc
    r0 = prior.row_counts

    if controller == "adaptive":
        ctrl = AdaptiveController(structure, cfg, prior, scen.rates(), noise, scen.m_cap, method=method)
    elif controller == "baseline":
        h0 = smident.init_nominal(prior).h_c
        opts = scen.baseline
        ctrl = BaselineController(structure, cfg, h0, forgetting=float(opts.get("forgetting", 0.9)),
                                  p0=float(opts.get("p0", 1e3)), rho=opts.get("rho"))
    else:
        raise ValueError(f"unknown controller {controller!r}")

    cand_steps = _sample_steps(steps, audit.candidate_samples) if audit.enabled else set()
    # a pair sampled at t is checked at t + 1, so the last step cannot be sampled
    nest_steps = _sample_steps(steps - 1, audit.nested_samples) if audit.enabled else set()
    rows = []
    membership, cap_excess, timings = [], [], []
    candidate_checks, nested_checks = [], []
    output_viol_steps, envelope_viol = [], 0
    breaches, empty_sets = [], []
    prev_seq = None
    state = plant.reset()
    completed = 0
    for t in range(steps):
        y_des = scen.reference_window(t, steps)
        candidate = ctrl.candidate() if controller == "adaptive" else None
        t_start = time.perf_counter()
        try:
            decision = ctrl.step(state.y_meas, y_des)
        except RecursiveFeasibilityBreach as exc:
            breaches.append({"step": t, "status": exc.status})
            log.error("%s", exc)
            break
        except EmptyFeasibleSet as exc:
            empty_sets.append({"step": t, "output": exc.output})
            log.error("step %d: %s", t, exc)
            break
        timings.append(time.perf_counter() - t_start)

        y_true = state.y_true
        excess = scen.mpc.cy_matrix @ y_true - scen.mpc.gy_vector
        if np.any(excess > 0):
            output_viol_steps.append(t)
        row = {
            "step": t,
            "time_s": t * scen.truth.params.dt,
            **{f"h{j + 1}_true": state.levels[j] for j in range(N_Y)},
            **{f"h{j + 1}_meas": scen.truth.h_star[j] + state.y_meas[j] for j in range(N_Y)},
            **{f"u{i + 1}": decision.u_apply[i] for i in range(structure.n_u)},
            "reference": scen.truth.h_star[scen.reference_output] + y_des[0, scen.reference_output],
            "status": decision.status,
            "objective": decision.objective,
            "max_output_excess": float(excess.max()),
        }
        if controller == "adaptive":
            fps = ctrl.fps
            memb = fps.violation(state.h_true)
            membership.append(memb)
            counts = fps.row_counts
            cap_excess.append(max(c - (r + scen.m_cap) for c, r in zip(counts, r0)))
            lower, upper = output_envelope(fps, state.phi, noise.eps_d, start=ctrl.nominal.h_c)
            if np.any(y_true < lower - ENVELOPE_TOL) or np.any(y_true > upper + ENVELOPE_TOL):
                envelope_viol += 1
            row.update({f"r{j + 1}": counts[j] for j in range(N_Y)})
            row.update({f"h{j + 1}_env_lo": scen.truth.h_star[j] + lower[j] for j in range(N_Y)})
            row.update({f"h{j + 1}_env_hi": scen.truth.h_star[j] + upper[j] for j in range(N_Y)})
            row["solver_rounds"] = decision.info["rounds"]
            problem = ctrl.last_problem
            if t in cand_steps and candidate is not None:
                candidate_checks.append({"step": t, "violation": problem.max_violation(candidate)})
            if prev_seq is not None and (t - 1) in nest_steps and cfg.horizon > 1:
                offset = 1 + ((t - 1) % (cfg.horizon - 1))
                viol = nestedness_violation(prev_seq, problem.seq, offset, start=ctrl.nominal.h_c)
                nested_checks.append({"step": t - 1, "k": t + offset, "violation": viol})
            prev_seq = problem.seq
        else:
            row["slack_max"] = decision.info.get("slack_max", 0.0)
        rows.append(row)
        completed = t + 1
        state = plant.step(state, decision.u_apply)

    audit_out = {
        "controller": controller,
        "seed": seed,
        "steps_requested": steps,
        "steps_completed": completed,
        "breaches": breaches,
        "empty_feasible_sets": empty_sets,
        "output_violations": len(output_viol_steps),
        "output_violation_steps": output_viol_steps[:50],
        "step_time_s": _summary(timings),
    }
    if controller == "adaptive":
        audit_out.update({
            "membership_max_violation": float(max(membership)) if membership else None,
            "membership_violations": int(sum(v > MEMBERSHIP_TOL for v in membership)),
            "row_cap": {"m_cap": scen.m_cap, "r0": r0, "max_excess": int(max(cap_excess)) if cap_excess else None},
            "candidate_checks": candidate_checks,
            "candidate_max_violation": max((c["violation"] for c in candidate_checks), default=None),
            "nestedness_checks": nested_checks,
            "nestedness_max_violation": max((c["violation"] for c in nested_checks), default=None),
            "envelope_violations": envelope_viol,
            "restarts": ctrl.restarts,
        })
    else:
        audit_out["qp_failures"] = ctrl.failures
    return RunResult(controller, rows, audit_out, completed)


def audit_failures(result: RunResult) -> list[str]:
    """Human-readable list of invariant breaches in an audited run."""
    a = result.audit
    out = []
    if a["steps_completed"] < a["steps_requested"]:
        out.append(f"run stopped after {a['steps_completed']} of {a['steps_requested']} steps")
    if a["breaches"]:
        out.append(f"{len(a['breaches'])} feasibility breach(es)")
    if result.controller == "adaptive":
        if a["membership_violations"]:
            out.append(f"membership violated at {a['membership_violations']} step(s)")
        if a["row_cap"]["max_excess"] is not None and a["row_cap"]["max_excess"] > 0:
            out.append("row cap exceeded")
        if a["candidate_max_violation"] is not None and a["candidate_max_violation"] > CANDIDATE_TOL:
            out.append(f"shifted candidate infeasible by {a['candidate_max_violation']:.3e}")
        if a["nestedness_max_violation"] is not None and a["nestedness_max_violation"] > NESTED_TOL:
            out.append(f"nestedness violated by {a['nestedness_max_violation']:.3e}")
        if a["envelope_violations"]:
            out.append(f"envelope missed the output at {a['envelope_violations']} step(s)")
        if a["output_violations"]:
            out.append(f"output limits violated at {a['output_violations']} step(s)")
    return out


def write_csv(result: RunResult, path) -> None:
    path = Path(path)
    if not result.rows:
        path.write_text("")
        return
    fields = list(result.rows[0].keys())
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in result.rows:
            writer.writerow([_fmt(row[k]) for k in fields])


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_audit(results: list, path, extra: dict | None = None) -> None:
    payload = dict(extra or {})
    payload["runs"] = {r.controller: r.audit for r in results}
    Path(path).write_text(json.dumps(payload, indent=2, default=float))
