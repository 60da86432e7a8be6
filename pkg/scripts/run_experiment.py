"""Run adaptive and baseline controllers on a scenario and print a comparison table.

    python scripts/run_experiment.py scenarios/desk.json --steps 200 --out runs/desk
"""

import argparse
import json
from pathlib import Path

from adaptive_mpc.experiment import AuditOptions, audit_failures, run_closed_loop, write_audit, write_csv
from adaptive_mpc.scenario import load_scenario


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("scenario", type=Path)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=Path, default=Path("runs"))
    args = parser.parse_args()

    scen = load_scenario(args.scenario)
    args.out.mkdir(parents=True, exist_ok=True)
    results = []
    for kind in ("adaptive", "baseline"):
        res = run_closed_loop(scen, kind, args.steps, args.seed, AuditOptions(enabled=True))
        write_csv(res, args.out / f"{kind}.csv")
        results.append(res)
    write_audit(results, args.out / "audit.json", {"scenario": scen.name})

    print(f"{'controller':<10} {'steps':>6} {'violations':>10} {'mean s/step':>12}  issues")
    for res in results:
        a = res.audit
        issues = audit_failures(res) if res.controller == "adaptive" else []
        print(f"{res.controller:<10} {res.steps_completed:>6} {res.output_violations:>10} "
              f"{a['step_time_s'].get('mean', float('nan')):>12.4f}  {json.dumps(issues)}")


if __name__ == "__main__":
    main()
