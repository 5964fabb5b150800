"""Consensus ADMM coordinator for the cooperative scheduling problem.

Each iteration fans the local subproblems out in parallel, updates the
global migration tensors in closed antisymmetric form, solves the small
global load-curve subproblem, and ascends the duals.  Residuals are
computed on per-unit-scaled consensus gaps (workloads scaled by the
largest upper support, powers by the largest declared capacity) so a
single penalty weight is meaningful across commodities.

On convergence the reported solution is produced by one restricted
solve with the migration tensors fixed at the global values, which
yields a point exactly feasible for the centralized problem.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assemble import (
    ADMM_SOLVER_TOL,
    AdmmDuals,
    AdmmGlobals,
    AdmmPenalty,
    CoalitionSolution,
    ProblemContext,
    build_admm_global_load,
    build_admm_local,
    enforce_bess_complementarity,
    solve_coalition,
    update_globals_migration,
)
from .model import MigrationTensor
from .program import solve

DEFAULT_RHO = 1.0
DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITERS = 500

STATUS_CONVERGED = "converged"
STATUS_ITERATION_LIMIT = "iteration-limit"


class AdmmLocalInfeasibleError(RuntimeError):
    def __init__(self, vpp, iteration, status):
        self.vpp = vpp
        self.iteration = iteration
        super().__init__(
            f"local subproblem for vpp {vpp} returned {status!r} at iteration {iteration}"
        )


@dataclass
class AdmmState:
    iteration: int
    globals_: AdmmGlobals
    duals: AdmmDuals
    d: float
    rho: float
    penalty: AdmmPenalty
    primal_residual: float
    dual_residual: float


@dataclass
class TraceRow:
    iteration: int
    objective: float
    primal_residual: float
    dual_residual: float
    wall_time: float


@dataclass
class AdmmResult:
    status: str
    solution: CoalitionSolution
    state: AdmmState
    trace: list[TraceRow]
    scale_workload: float
    scale_power: float

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED

    @property
    def objective(self) -> float:
        return self.solution.objective


def dual_update(duals: AdmmDuals, local_workload, local_energy, local_grid,
                globals_: AdmmGlobals, penalty) -> AdmmDuals:
    """Gradient ascent y <- y + rho * (local - global) for all families."""
    pen = penalty if isinstance(penalty, AdmmPenalty) else AdmmPenalty.uniform(penalty)
    return AdmmDuals(
        y_workload=duals.y_workload + pen.workload * (local_workload - globals_.mig_workload),
        y_energy=duals.y_energy + pen.energy * (local_energy - globals_.mig_energy),
        y_grid=duals.y_grid + pen.grid * (local_grid - globals_.grid_buy),
    )


def residuals(locals_, globals_, previous_globals, rho):
    """Standard consensus residuals on stacked arrays.

    ``r`` is the Euclidean norm of all consistency gaps (local - global),
    ``s`` is ``rho`` times the norm of the global step.
    """
    r_sq = sum(float(((l - g) ** 2).sum()) for l, g in zip(locals_, globals_))
    s_sq = sum(float(((g - p) ** 2).sum()) for g, p in zip(globals_, previous_globals))
    return np.sqrt(r_sq), rho * np.sqrt(s_sq)


def consensus_scales(ctx: ProblemContext):
    """Per-unit scales: workload by largest upper support, power by capacity."""
    s_lam = max(
        (t.c for p in ctx.profiles for t in p.workload_fuzzy), default=1.0
    )
    s_pow = max(p.declared_capacity for p in ctx.profiles)
    return max(float(s_lam), 1.0), max(float(s_pow), 1.0)


def _feasible_cost(ctx, globals_: AdmmGlobals, solver_tol):
    """Cooperative cost of stopping coordination at the current globals.

    Solves the scheduling problem with the migration tensors fixed at the
    global iterate; the result is feasible for the centralized problem,
    so the trace converges to the reported objective from above.
    """
    from .assemble import InfeasibleModelError, SolveFailedError

    tensor = MigrationTensor(globals_.mig_workload.copy(), globals_.mig_energy.copy())
    try:
        restricted = solve_coalition(
            ctx, ctx.members_all(), tolerance=solver_tol, fixed_migration=tensor
        )
    except (InfeasibleModelError, SolveFailedError):
        return float("inf")
    return restricted.objective


def run(ctx: ProblemContext, rho=DEFAULT_RHO, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS,
        solver_tol=ADMM_SOLVER_TOL, polish_tol=None, workers=None) -> AdmmResult:
    """Iterate the three-block consensus scheme until both residuals pass.

    Stops when the scaled primal and dual residuals both fall below
    ``tol * sqrt(consensus dimension)``; otherwise returns the best
    iterate with an iteration-limit status.  Deterministic for identical
    inputs and settings.
    """
    if rho <= 0 or tol <= 0 or max_iters < 1:
        raise ValueError("need rho > 0, tol > 0, max_iters >= 1")
    net = ctx.network
    members = ctx.members_all()
    n, T = net.n_vpps, ctx.horizon
    s_lam, s_pow = consensus_scales(ctx)
    pen = AdmmPenalty(rho / s_lam**2, rho / s_pow**2, rho / s_pow**2)

    caps = np.array([p.declared_capacity for p in ctx.profiles])
    cdl = np.asarray(net.cdl)
    globals_ = AdmmGlobals(
        mig_workload=np.zeros((T, n, n)),
        mig_energy=np.zeros((T, n, n)),
        grid_buy=np.outer(caps, cdl),  # CDL-shaped warm start
    )
    duals = AdmmDuals(np.zeros((T, n, n)), np.zeros((T, n, n)), np.zeros((n, T)))

    dim = 2 * T * n * max(n - 1, 0) + n * T
    eps = tol * np.sqrt(dim)

    trace: list[TraceRow] = []
    t_start = time.perf_counter()
    d_value = float(np.linalg.norm(globals_.grid_buy.sum(axis=0) / caps.sum() - cdl))
    r = s = np.inf
    k = 0
    status = STATUS_ITERATION_LIMIT

    def solve_local(i):
        prog = build_admm_local(ctx, i, globals_, duals, pen)
        outcome = solve(prog, tolerance=solver_tol)
        return i, prog, outcome

    pool = ThreadPoolExecutor(max_workers=min(n, 8)) if (workers is None or workers > 1) and n > 1 else None
    try:
        for k in range(1, max_iters + 1):
            if pool is not None:
                results = list(pool.map(solve_local, members))
            else:
                results = [solve_local(i) for i in members]

            loc_w = np.zeros((T, n, n))
            loc_e = np.zeros((T, n, n))
            loc_pb = np.zeros((n, T))
            for i, prog, outcome in results:
                if not outcome.optimal:
                    raise AdmmLocalInfeasibleError(ctx.profiles[i].id, k, outcome.status)
                x = outcome.primal
                for j in members:
                    if j == i:
                        continue
                    for t in range(T):
                        loc_w[t, i, j] = x[prog.var(f"mw[{i},{j},{t}]")]
                        loc_e[t, i, j] = x[prog.var(f"me[{i},{j},{t}]")]
                for t in range(T):
                    loc_pb[i, t] = x[prog.var(f"pb[{i},{t}]")]

            prev = (
                globals_.mig_workload.copy(),
                globals_.mig_energy.copy(),
                globals_.grid_buy.copy(),
            )
            g_w, g_e = update_globals_migration(
                loc_w, loc_e, duals, pen, net.lambda_cap, net.power_cap
            )
            load_prog = build_admm_global_load(ctx, loc_pb, duals.y_grid, pen)
            load_out = solve(load_prog, tolerance=solver_tol)
            if not load_out.optimal:
                raise AdmmLocalInfeasibleError("global-load", k, load_out.status)
            g_pb = np.array(
                [[load_out.primal[load_prog.var(f"gpb[{i},{t}]")] for t in range(T)] for i in members]
            )
            d_value = float(load_out.primal[load_prog.var("d")])
            globals_ = AdmmGlobals(g_w, g_e, g_pb)

            duals = dual_update(duals, loc_w, loc_e, loc_pb, globals_, pen)

            r, s = residuals(
                (loc_w / s_lam, loc_e / s_pow, loc_pb / s_pow),
                (g_w / s_lam, g_e / s_pow, g_pb / s_pow),
                (prev[0] / s_lam, prev[1] / s_pow, prev[2] / s_pow),
                rho,
            )

            objective = _feasible_cost(ctx, globals_, solver_tol)
            trace.append(
                TraceRow(k, float(objective), float(r), float(s), time.perf_counter() - t_start)
            )

            if r < eps and s < eps:
                status = STATUS_CONVERGED
                break
    finally:
        if pool is not None:
            pool.shutdown()

    tensor = MigrationTensor(globals_.mig_workload.copy(), globals_.mig_energy.copy())
    solution = solve_coalition(
        ctx, members, tolerance=polish_tol or ADMM_SOLVER_TOL * 1e-2,
        fixed_migration=tensor,
    )
    solution = enforce_bess_complementarity(solution)
    state = AdmmState(
        iteration=k,
        globals_=globals_,
        duals=duals,
        d=d_value,
        rho=rho,
        penalty=pen,
        primal_residual=float(r),
        dual_residual=float(s),
    )
    return AdmmResult(
        status=status,
        solution=solution,
        state=state,
        trace=trace,
        scale_workload=s_lam,
        scale_power=s_pow,
    )


def export_trace_csv(trace, path):
    """One row per iteration: k, objective, r, s, wall time."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective", "primal_residual", "dual_residual", "wall_time"])
        for row in trace:
            writer.writerow([row.iteration, repr(row.objective), repr(row.primal_residual),
                             repr(row.dual_residual), repr(row.wall_time)])
    return path
