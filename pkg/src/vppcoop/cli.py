"""Command-line entry point.

Subcommands cover the full two-phase workflow (distributed cooperative
optimization followed by profit allocation), the standalone solves, an
invariant validation suite, and a scalability benchmark.

Exit codes: 0 success, 2 argument/scenario validation, 3 infeasible,
4 iteration limit, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace

import numpy as np

from . import admm
from .allocate import (
    CharacteristicOracle,
    allocate_from_oracle,
    format_cost_table,
    improved_allocation,
    shapley_from_oracle,
    verify_identities,
)
from .assemble import (
    InfeasibleModelError,
    ProblemContext,
    SolveFailedError,
    solve_coalition,
    structural_report,
)
from .fuzzy import FuzzyTriple, LinearFuzzyConstraint, combined_credibility, crisp_equivalent
from .model import ModelError, NetworkConfig
from .scenario import (
    RunArtifacts,
    ScenarioError,
    export_run,
    generate_synthetic,
    load_scenario_file,
    reduce_context,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_ITERATION_LIMIT = 4
EXIT_IO = 5

# module-level defaults, also used when a scenario omits a setting
DEFAULT_BETA = 0.9
DEFAULT_GAMMA = 0.1
DEFAULT_RHO = admm.DEFAULT_RHO
DEFAULT_TOL = admm.DEFAULT_TOL
DEFAULT_MAX_ITERS = admm.DEFAULT_MAX_ITERS


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _add_common(parser, solver_flags=True):
    parser.add_argument("scenario", help="path to a scenario JSON file")
    parser.add_argument(
        "--beta", type=float, default=None,
        help=f"confidence level in [0.5, 1] (default: scenario value, else {DEFAULT_BETA})",
    )
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--out", default=None, help="directory for result artifacts")
    if solver_flags:
        parser.add_argument(
            "--rho", type=float, default=None,
            help=f"consensus penalty weight (default: scenario value, else {DEFAULT_RHO})",
        )
        parser.add_argument(
            "--tol", type=float, default=None,
            help=f"residual tolerance (default: scenario value, else {DEFAULT_TOL})",
        )
        parser.add_argument(
            "--max-iters", type=int, default=None,
            help=f"iteration cap (default: scenario value, else {DEFAULT_MAX_ITERS})",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vppcoop",
        description="Cooperative scheduling and cost allocation for data-center VPPs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("solve-independent", help="standalone solves for every VPP"),
                solver_flags=False)
    _add_common(sub.add_parser("solve-coop", help="distributed cooperative solve"))
    p_alloc = sub.add_parser("allocate", help="characteristic solves and cost allocation")
    _add_common(p_alloc, solver_flags=False)
    p_alloc.add_argument(
        "--gamma", type=float, default=None,
        help=f"operator fee fraction in [0, 1) (default: scenario value, else {DEFAULT_GAMMA})",
    )
    p_pipe = sub.add_parser("pipeline", help="full two-phase run with export")
    _add_common(p_pipe)
    p_pipe.add_argument(
        "--gamma", type=float, default=None,
        help=f"operator fee fraction in [0, 1) (default: scenario value, else {DEFAULT_GAMMA})",
    )
    p_val = sub.add_parser("validate", help="invariant suite on a scenario")
    p_val.add_argument("scenario")
    p_val.add_argument("--json", action="store_true")

    p_bench = sub.add_parser("bench", help="scalability benchmark")
    p_bench.add_argument("--n-range", default="2:5", help="fleet sizes lo:hi inclusive")
    p_bench.add_argument("--t", type=int, default=8, help="horizon length")
    p_bench.add_argument("--repeats", type=int, default=1)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default=None, help="CSV output path")
    p_bench.add_argument("--json", action="store_true")
    return parser


def _load(args, need_gamma=False):
    try:
        scen = load_scenario_file(args.scenario)
    except ScenarioError as err:
        raise CliError(f"scenario: {err}", EXIT_USAGE)
    net = scen.network
    beta = getattr(args, "beta", None)
    gamma = getattr(args, "gamma", None) if need_gamma else None
    try:
        if beta is not None or gamma is not None:
            net = replace(
                net,
                beta=net.beta if beta is None else beta,
                gamma=net.gamma if gamma is None else gamma,
            )
    except ModelError as err:
        raise CliError(str(err), EXIT_USAGE)
    ctx = ProblemContext(network=net, profiles=scen.vpps)
    solver = scen.solver
    rho = getattr(args, "rho", None) or solver.rho
    tol = getattr(args, "tol", None) or solver.tol
    max_iters = getattr(args, "max_iters", None) or solver.max_iters
    if rho <= 0 or tol <= 0 or max_iters < 1:
        raise CliError("need rho > 0, tol > 0, max-iters >= 1", EXIT_USAGE)
    return ctx, rho, tol, max_iters


def _solve_independents(ctx):
    out = {}
    for i in range(ctx.network.n_vpps):
        try:
            out[i] = solve_coalition(ctx, (i,))
        except (InfeasibleModelError, SolveFailedError) as err:
            raise CliError(f"independent solve for {ctx.profiles[i].id}: {err}", EXIT_INFEASIBLE)
    return out


def cmd_solve_independent(args):
    ctx, *_ = _load(args)
    solutions = _solve_independents(ctx)
    rows = {
        ctx.profiles[i].id: {
            "objective": float(s.objective),
            "distance": float(s.dr.distance),
            "similarity": float(s.dr.similarity),
            "incentive": float(s.dr.incentive),
        }
        for i, s in solutions.items()
    }
    payload = {"independent": rows, "total": float(sum(s.objective for s in solutions.values()))}
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for vpp, row in rows.items():
            print(
                f"{vpp}: cost {row['objective']:.4f}  d {row['distance']:.4f}"
                f"  similarity {row['similarity']:.4f}  incentive {row['incentive']:.4f}"
            )
        print(f"total independent cost: {payload['total']:.4f}")
    return EXIT_OK


def _run_admm(ctx, rho, tol, max_iters):
    try:
        return admm.run(ctx, rho=rho, tol=tol, max_iters=max_iters)
    except (InfeasibleModelError, SolveFailedError, admm.AdmmLocalInfeasibleError) as err:
        raise CliError(f"cooperative solve: {err}", EXIT_INFEASIBLE)


def cmd_solve_coop(args):
    ctx, rho, tol, max_iters = _load(args)
    result = _run_admm(ctx, rho, tol, max_iters)
    payload = {
        "status": result.status,
        "iterations": result.state.iteration,
        "objective": float(result.objective),
        "distance": float(result.solution.dr.distance),
        "similarity": float(result.solution.dr.similarity),
        "incentive": float(result.solution.dr.incentive),
    }
    if args.out:
        try:
            from pathlib import Path

            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            admm.export_trace_csv(result.trace, out / "trace.csv")
            from .scenario import write_migration_csv

            write_migration_csv(result.solution.migration, out / "migration.csv")
        except OSError as err:
            raise CliError(f"write failed: {err}", EXIT_IO)
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(
            f"cooperative: {payload['status']} after {payload['iterations']} iterations, "
            f"cost {payload['objective']:.4f}, d {payload['distance']:.4f}"
        )
    return EXIT_OK if result.converged else EXIT_ITERATION_LIMIT


def cmd_allocate(args):
    ctx, *_ = _load(args, need_gamma=True)
    oracle = CharacteristicOracle(ctx)
    try:
        report = allocate_from_oracle(oracle, gamma=ctx.network.gamma)
    except (InfeasibleModelError, SolveFailedError) as err:
        raise CliError(str(err), EXIT_INFEASIBLE)
    verify_identities(report)
    if args.json:
        print(report.to_json(indent=2, sort_keys=True))
    else:
        print(format_cost_table(report, [p.id for p in ctx.profiles]))
        print(f"characteristic solves: {oracle.calls}")
    return EXIT_OK


def cmd_pipeline(args):
    ctx, rho, tol, max_iters = _load(args, need_gamma=True)
    independent = _solve_independents(ctx)
    result = _run_admm(ctx, rho, tol, max_iters)
    standalone = [independent[i].objective for i in range(ctx.network.n_vpps)]
    report = improved_allocation(standalone, result.objective, ctx.network.gamma)
    verify_identities(report)
    artifacts = RunArtifacts(ctx, independent, result, report)

    if args.out:
        try:
            export_run(artifacts, args.out)
        except OSError as err:
            raise CliError(f"write failed: {err}", EXIT_IO)

    if args.json:
        print(json.dumps(artifacts.results_dict(), indent=2, sort_keys=True))
    else:
        ids = [p.id for p in ctx.profiles]
        width = max(12, max(len(s) for s in ids) + 2)
        print("DR tracking".ljust(24) + "".join(s.rjust(width) for s in ids) + "coop".rjust(width))
        print(
            "distance".ljust(24)
            + "".join(f"{independent[i].dr.distance:.4f}".rjust(width) for i in range(len(ids)))
            + f"{result.solution.dr.distance:.4f}".rjust(width)
        )
        print(
            "similarity".ljust(24)
            + "".join(f"{independent[i].dr.similarity:.4f}".rjust(width) for i in range(len(ids)))
            + f"{result.solution.dr.similarity:.4f}".rjust(width)
        )
        print()
        print(format_cost_table(report, ids))
        savings = sum(standalone) - result.objective
        print(
            f"cooperative {result.status} after {result.state.iteration} iterations; "
            f"savings {savings:.4f} ({100 * savings / abs(sum(standalone)):.2f}%)"
        )
    return EXIT_OK if result.converged else EXIT_ITERATION_LIMIT


def _validate_checks(ctx, rho, tol, max_iters):
    checks = []

    def record(name, value, threshold):
        checks.append({"name": name, "value": float(value), "threshold": threshold,
                       "passed": bool(value <= threshold)})

    # closed-form credibility boundary against the fuzzy oracle
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        k = rng.integers(1, 4)
        terms = []
        for _ in range(k):
            h = rng.uniform(0.1, 4.0) * rng.choice((-1.0, 1.0))
            a = rng.uniform(-20, 20)
            b = a + rng.uniform(0.1, 10)
            c = b + rng.uniform(0.1, 10)
            terms.append((h, FuzzyTriple(a, b, c)))
        beta = rng.uniform(0.5, 1.0)
        lhs = crisp_equivalent(LinearFuzzyConstraint(tuple(terms), 0.0, beta))
        boundary = LinearFuzzyConstraint(tuple(terms), -lhs, beta)
        worst = max(worst, abs(combined_credibility(boundary) - beta))
    record("credibility_boundary", worst, 1e-9)

    reduced = reduce_context(ctx)
    n = reduced.network.n_vpps
    result = admm.run(reduced, rho=rho, tol=tol, max_iters=max_iters)
    central = solve_coalition(reduced, tuple(range(n)))
    gap = abs(result.objective - central.objective) / max(abs(central.objective), 1e-9)
    record("admm_centralized_gap", gap, 1e-3)

    rep = structural_report(result.solution)
    record("migration_antisymmetry", rep["migration_antisymmetry"], 1e-9)
    record("migration_net_transfer", rep["migration_net_transfer"], 1e-9)
    record("migration_caps", rep["migration_caps"], 1e-9)
    record("soc_cyclic", rep["soc_cyclic"], 1e-6)
    record("qos_cone_tightness", rep["qos_tightness"], 1e-6)
    record("bess_complementarity", rep["bess_complementarity"], 1e-6)
    record("power_balance", rep["power_balance"], 1e-6)

    standalone = [solve_coalition(reduced, (i,)).objective for i in range(n)]
    report = improved_allocation(standalone, result.objective, reduced.network.gamma)
    try:
        verify_identities(report)
        record("allocation_identities", 0.0, 1.0)
    except Exception:
        record("allocation_identities", 1.0, 0.0)
    record("cooperation_dominance", result.objective - sum(standalone), 1e-6)
    return checks


def cmd_validate(args):
    try:
        scen = load_scenario_file(args.scenario)
    except ScenarioError as err:
        print(f"FAIL scenario-load: {err}")
        return 1
    ctx = scen.to_context()
    try:
        checks = _validate_checks(ctx, scen.solver.rho, scen.solver.tol, scen.solver.max_iters)
    except (InfeasibleModelError, SolveFailedError, admm.AdmmLocalInfeasibleError) as err:
        print(f"FAIL reduced-solve: {err}")
        return 1
    if args.json:
        print(json.dumps(checks, indent=2))
    else:
        for c in checks:
            tag = "PASS" if c["passed"] else "FAIL"
            print(f"{tag} {c['name']}: {c['value']:.3e} (threshold {c['threshold']:.0e})")
    return EXIT_OK if all(c["passed"] for c in checks) else 1


def cmd_bench(args):
    try:
        lo, hi = (int(v) for v in args.n_range.split(":"))
    except ValueError:
        raise CliError("--n-range must look like 2:5", EXIT_USAGE)
    if lo < 1 or hi < lo:
        raise CliError("--n-range must be increasing and positive", EXIT_USAGE)
    rows = []
    for n in range(lo, hi + 1):
        for rep in range(args.repeats):
            scen = generate_synthetic(args.seed + rep, n, args.t)
            ctx = scen.to_context()
            t0 = time.perf_counter()
            solve_coalition(ctx, tuple(range(n)))
            rows.append({"n": n, "mode": "centralized", "seconds": time.perf_counter() - t0,
                         "solves": 1})
            t0 = time.perf_counter()
            res = admm.run(ctx, rho=scen.solver.rho, tol=scen.solver.tol,
                           max_iters=scen.solver.max_iters)
            rows.append({"n": n, "mode": "admm", "seconds": time.perf_counter() - t0,
                         "solves": res.state.iteration * (n + 1)})
            oracle = CharacteristicOracle(ctx)
            t0 = time.perf_counter()
            allocate_from_oracle(oracle, gamma=ctx.network.gamma)
            rows.append({"n": n, "mode": "allocation_improved",
                         "seconds": time.perf_counter() - t0, "solves": oracle.calls})
            if n <= 8:
                oracle = CharacteristicOracle(ctx)
                t0 = time.perf_counter()
                shapley_from_oracle(oracle)
                rows.append({"n": n, "mode": "allocation_shapley",
                             "seconds": time.perf_counter() - t0, "solves": oracle.calls})
    if args.out:
        try:
            import csv as csv_mod

            with open(args.out, "w", newline="") as fh:
                writer = csv_mod.DictWriter(fh, fieldnames=["n", "mode", "seconds", "solves"])
                writer.writeheader()
                writer.writerows(rows)
        except OSError as err:
            raise CliError(f"write failed: {err}", EXIT_IO)
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        for row in rows:
            print(f"n={row['n']:2d} {row['mode']:22s} {row['seconds']:8.3f}s solves={row['solves']}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "solve-independent": cmd_solve_independent,
        "solve-coop": cmd_solve_coop,
        "allocate": cmd_allocate,
        "pipeline": cmd_pipeline,
        "validate": cmd_validate,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
