"""Regenerate the shipped scenario files with prior and rate bounds fitted to the truth plant.

    python scripts/make_scenarios.py            # writes scenarios/desk.json and scenarios/paper.json
    python scripts/make_scenarios.py --only desk
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from adaptive_mpc.plant import TankParams, TruthConfig, ValveSchedule, design_bounds

ROOT = Path(__file__).resolve().parents[1]

BOX4 = [[1, 0], [0, 1], [-1, 0], [0, -1]]
# h1 <= h1* + 5, h3 >= 0, h2 <= h1, h3 <= h2 (deviation coordinates around h* = (8, 7, 6))
OUTPUT_LIMITS = {"cy": [[1, 0, 0], [0, 0, -1], [-1, 1, 0], [0, -1, 1]], "gy": [5, 6, 1, 1]}

PRESETS = {
    # reduced configuration: slow sampling so one run covers the valve manoeuvre
    "desk": dict(dt=40.0, n_taps=6, input_scale=10.0, steps=500, horizon=10, m_cap=40,
                 reference=[0.0, 4.0, -1.0, 0.0]),
    # tuning table values with the short sampling time taken verbatim
    "paper": dict(dt=0.16, n_taps=12, input_scale=1.0, steps=200, horizon=22, m_cap=100,
                  reference=[0.0, 4.0, -1.0, 0.0]),
}


def valve_schedule(total_time: float) -> dict:
    """Valve 1 closes and valve 3 opens between 20 % and 60 % of the run."""
    t = total_time
    return {"time": [0.0, 0.2 * t, 0.6 * t, t], "gamma1": [0.4, 0.4, 0.25, 0.25],
            "gamma3": [0.3, 0.3, 0.45, 0.45]}


def build(name: str, dt: float, n_taps: int, input_scale: float, steps: int, horizon: int, m_cap: int,
          reference: list, seed: int = 7) -> dict:
    sched = valve_schedule(steps * dt)
    params = TankParams(dt=dt, input_scale=input_scale)
    truth = TruthConfig(params, ValveSchedule(tuple(sched["time"]), tuple(sched["gamma1"]),
                                              tuple(sched["gamma3"])), n_taps=n_taps)
    omega, rate = design_bounds(truth, steps)
    return {
        "name": name,
        "seed": seed,
        "steps": steps,
        "plant": {"s_area": params.s_area, "sc_area": params.sc_area, "gamma2": params.gamma2,
                  "gravity": params.gravity, "dt": dt, "input_scale": input_scale,
                  "h_star": [8.0, 7.0, 6.0], "truth": "fir"},
        "schedule": sched,
        "noise": {"eps_d": [0.1] * 3, "eps_v": [0.1] * 3},
        "model": {"n_taps": n_taps},
        "bounds": {"omega_upper": omega.tolist(), "rate": rate.tolist()},
        "controller": {"horizon": horizon, "m_cap": m_cap,
                       "q": [[0, 0, 0], [0, 1, 0], [0, 0, 0]], "r": [[0.5, 0], [0, 0.5]], "s": [[0, 0], [0, 0]],
                       "cu": BOX4, "gu": [9, 9, 9, 9], "cdu": BOX4, "gdu": [4, 4, 4, 4],
                       **OUTPUT_LIMITS, "infeasibility_policy": "fail_fast"},
        "baseline": {"forgetting": 0.9, "p0": 1000.0, "rho": None},
        "reference": {"output": 1, "levels": reference},
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--only", choices=sorted(PRESETS))
    parser.add_argument("--out-dir", type=Path, default=ROOT / "scenarios")
    args = parser.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, preset in PRESETS.items():
        if args.only and name != args.only:
            continue
        scen = build(name, **preset)
        path = args.out_dir / f"{name}.json"
        path.write_text(json.dumps(scen, indent=2) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
