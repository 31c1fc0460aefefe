"""Command-line front end.

    symctrl abstract    --problem P --out DIR [--workers N]
    symctrl synthesize  --problem P --out DIR [--workers N]
    symctrl simulate    --problem P --out DIR [--runs R] [--horizon H] [--seed S]
    symctrl verify-frr  FIXTURE...

Exit codes: 0 success, 2 schema or input error, 3 unsolvable problem,
4 internal assertion (including a violated closed-loop guarantee).
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .abstraction import compute_transitions
from .core import RECURRENCE, REACH_AVOID, SAFETY
from .problem import (SchemaError, load_controller, load_transitions, read_problem,
                      save_controller, save_transitions)
from .relations import FixtureError, parse_fixture, run_fixture_checks
from .runtime import check_trace, simulate
from .synthesis import SynthesisError, solve_reach_avoid, solve_recurrence, solve_safety

EXIT_OK, EXIT_SCHEMA, EXIT_UNSOLVABLE, EXIT_INTERNAL = 0, 2, 3, 4

TRANSITIONS = "transitions.bin"
CONTROLLER = "controller.txt"


class Unsolvable(RuntimeError):
    pass


def _emit(obj, out: Path | None, name: str):
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if out is not None:
        (out / name).write_text(text + "\n")


def _transitions(problem, out: Path, workers: int):
    path = out / TRANSITIONS
    if path.exists():
        sys_ = load_transitions(path)
        if sys_.grid != problem.grid or sys_.n_inputs != len(problem.inputs):
            raise SchemaError(f"{path} does not match the problem grid or inputs")
        return sys_
    sys_ = compute_transitions(problem.abstraction_spec(), workers=workers)
    save_transitions(sys_, path)
    return sys_


def cmd_abstract(args) -> int:
    problem = read_problem(args.problem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sys_ = compute_transitions(problem.abstraction_spec(), workers=args.workers)
    wall = time.perf_counter() - t0
    save_transitions(sys_, out / TRANSITIONS)
    _emit({"problem": problem.name, "cells": sys_.n_states, "inputs": sys_.n_inputs,
           "pairs": sys_.n_states * sys_.n_inputs,
           "admissible_pairs": int((~sys_.blocked).sum()),
           "transitions": sys_.transition_count(), "wall_time_s": round(wall, 3)},
          out, "abstract_stats.json")
    return EXIT_OK


def solve(problem, sys_):
    grid = problem.grid
    avoid = problem.spec.avoid_cells(grid)
    targets = problem.spec.target_cells(grid)
    if problem.spec.kind == SAFETY:
        W, ctrl = solve_safety(sys_, ~avoid)
    elif problem.spec.kind == REACH_AVOID:
        W, ctrl, _ = solve_reach_avoid(sys_, targets[0] & ~avoid, avoid)
    else:
        W, ctrl = solve_recurrence(sys_, [t & ~avoid for t in targets], avoid)
    ctrl.inputs = problem.inputs.copy()
    return W, ctrl


def cmd_synthesize(args) -> int:
    problem = read_problem(args.problem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sys_ = _transitions(problem, out, args.workers)
    t0 = time.perf_counter()
    W, ctrl = solve(problem, sys_)
    wall = time.perf_counter() - t0
    init = problem.spec.initial_cells(problem.grid)
    missing = int((init & ~W.member).sum())
    save_controller(ctrl, out / CONTROLLER)
    _emit({"problem": problem.name, "kind": problem.spec.kind, "winning_cells": W.size,
           "iterations": W.iterations, "initial_cells": int(init.sum()),
           "initial_cells_lost": missing, "wall_time_s": round(wall, 3)},
          out, "synthesize_stats.json")
    if W.empty:
        raise Unsolvable("the winning set is empty")
    if missing:
        raise Unsolvable(f"{missing} initial cells lie outside the winning set")
    return EXIT_OK


def cmd_simulate(args) -> int:
    problem = read_problem(args.problem)
    out = Path(args.out)
    ctrl = load_controller(out / CONTROLLER)
    if ctrl.grid != problem.grid or not np.array_equal(ctrl.inputs, problem.inputs):
        raise SchemaError("controller grid or inputs do not match the problem")
    runs = args.runs if args.runs is not None else problem.runs
    horizon = args.horizon if args.horizon is not None else problem.horizon
    seed = args.seed if args.seed is not None else problem.seed
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    results = []
    for r in range(runs):
        rng = np.random.default_rng([seed, r])
        x0 = problem.sample_initial(rng)
        # with an input perturbation, w is its folded-in bound and P1 is
        # applied literally instead of an additive disturbance
        w = problem.w if problem.perturbation.p1 is None else None
        tr = simulate(ctrl, problem.plant.vf, problem.perturbation, x0, horizon, rng, w,
                      tau=problem.cfg.tau, substeps=problem.cfg.substeps)
        verdict = check_trace(tr, problem.spec, problem.grid,
                              cycles=problem.cycles if problem.spec.kind == RECURRENCE else 1)
        (tdir / f"run_{r:03d}.csv").write_text(tr.to_csv())
        results.append({"run": r, "steps": tr.steps, "termination": tr.termination,
                        "satisfied": bool(verdict),
                        "violation": None if verdict else [verdict.step, verdict.reason]})
    n_ok = sum(r["satisfied"] for r in results)
    _emit({"problem": problem.name, "runs": runs, "horizon": horizon, "seed": seed,
           "satisfied": n_ok, "results": results}, out, "simulate_summary.json")
    if n_ok != runs:
        raise AssertionError(f"{runs - n_ok} of {runs} closed-loop runs violate the control objective")
    return EXIT_OK


def cmd_verify_frr(args) -> int:
    report = []
    for path in args.fixtures:
        try:
            fx = parse_fixture(Path(path).read_text())
        except (OSError, FixtureError) as e:
            raise SchemaError(f"{path}: {e}") from e
        for check, result in run_fixture_checks(fx):
            report.append({"fixture": str(path), "check": " ".join(check),
                           "ok": bool(result), "result": repr(result)})
    _emit(report, None, "")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="symctrl", description="Symbolic controller synthesis")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim=False):
        sp.add_argument("--problem", required=True,
                        help="problem YAML file, or the name of a bundled problem")
        sp.add_argument("--out", required=True, help="artifact directory")
        sp.add_argument("--workers", type=int, default=1)
        if sim:
            sp.add_argument("--seed", type=int, default=None)
            sp.add_argument("--runs", type=int, default=None)
            sp.add_argument("--horizon", type=int, default=None)

    common(sub.add_parser("abstract", help="compute the finite abstraction"))
    common(sub.add_parser("synthesize", help="solve the abstract problem"))
    common(sub.add_parser("simulate", help="simulate the perturbed closed loop"), sim=True)
    v = sub.add_parser("verify-frr", help="run the relation checks of fixture files")
    v.add_argument("fixtures", nargs="+")
    return p


COMMANDS = {"abstract": cmd_abstract, "synthesize": cmd_synthesize,
            "simulate": cmd_simulate, "verify-frr": cmd_verify_frr}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_SCHEMA if e.code else EXIT_OK
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        return COMMANDS[args.command](args)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except Unsolvable as e:
        print(f"unsolvable: {e}", file=sys.stderr)
        return EXIT_UNSOLVABLE
    except (AssertionError, SynthesisError) as e:
        print(f"internal assertion: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
