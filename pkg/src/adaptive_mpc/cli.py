"""Command line entry point: ``run`` closed-loop simulations, ``validate`` scenario files."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import AdaptiveMpcError, ConfigError
from .experiment import AuditOptions, audit_failures, run_closed_loop, write_audit, write_csv
from .scenario import load_scenario, validate_scenario

log = logging.getLogger("adaptive_mpc")


def _u64(text: str) -> int:
    val = int(text, 0)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def _positive(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-mpc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate the closed loop and write CSV plus audit JSON")
    run.add_argument("--scenario", required=True, type=Path)
    run.add_argument("--controller", choices=("adaptive", "baseline", "both"), default="both")
    run.add_argument("--steps", type=_positive, default=None, help="defaults to the scenario's step count")
    run.add_argument("--out", type=Path, default=Path("out"))
    run.add_argument("--seed", type=_u64, default=None, help="overrides the scenario seed")
    run.add_argument("--audit", action="store_true",
                     help="check invariants and exit nonzero on any breach")

    val = sub.add_parser("validate", help="check the truth model against the prior and rate sets")
    val.add_argument("--scenario", required=True, type=Path)
    val.add_argument("--steps", type=_positive, default=None)
    return parser


def cmd_run(args) -> int:
    scen = load_scenario(args.scenario)
    steps = args.steps or scen.steps
    seed = scen.seed if args.seed is None else args.seed
    if steps > scen.max_steps():
        raise ConfigError(f"the valve schedule covers {scen.max_steps()} steps; {steps} requested")
    args.out.mkdir(parents=True, exist_ok=True)
    kinds = ("adaptive", "baseline") if args.controller == "both" else (args.controller,)
    results = []
    for kind in kinds:
        log.info("running %s controller for %d steps (seed %d)", kind, steps, seed)
        res = run_closed_loop(scen, kind, steps, seed, AuditOptions(enabled=args.audit))
        write_csv(res, args.out / f"{kind}.csv")
        results.append(res)
        print(f"{kind}: {res.steps_completed}/{steps} steps, output violations {res.output_violations}, "
              f"mean step {res.audit['step_time_s'].get('mean', float('nan')):.3f} s")
    write_audit(results, args.out / "audit.json",
                {"scenario": scen.name, "scenario_file": str(args.scenario), "seed": seed, "steps": steps})
    status = 0
    for res in results:
        problems = audit_failures(res) if args.audit else (
            ["run stopped early"] if res.steps_completed < steps else [])
        for msg in problems:
            print(f"{res.controller}: {msg}", file=sys.stderr)
            status = 1
    return status


def cmd_validate(args) -> int:
    scen = load_scenario(args.scenario)
    report = validate_scenario(scen, args.steps)
    print(json.dumps(report.to_dict(), indent=2))
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_validate(args)
    except AdaptiveMpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
