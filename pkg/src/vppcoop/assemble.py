"""Deterministic-equivalent conic program assembly.

Builds the independent per-VPP scheduling problem, the centralized
cooperative problem over any coalition (the oracle), the consensus ADMM
local subproblems, and the global load-curve subproblem.  Fuzzy workload
and PV inputs enter through their credibility-equivalent values at the
network's confidence level: workload pessimistically (load adds to the
balance), PV optimistically (supply relieves it).

Nonlinearities are kept within the SOCP class:

* queueing delay ``z >= 1/(s*u - load)`` as the hyperbolic cone
  ``||(2, z - spare)|| <= z + spare``,
* the squared-delay objective weight through ``w >= z**2``,
* demand-response distance as a plain second-order cone,
* ``max(0, .)`` migration pricing through nonnegative splits,
* quadratic consensus penalties as epigraph cones.

Server counts are relaxed to continuous and tagged integer; rounding is
handled by :func:`round_servers`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fuzzy import optimistic_value, pessimistic_value
from .model import (
    DrMetrics,
    MigrationTensor,
    ModelError,
    NetworkConfig,
    ScheduleDecision,
    VppProfile,
    dr_metrics,
    migration_cost,
)
from .program import ConicProgram, SolveOutcome, solve

DEFAULT_SOLVER_TOL = 1e-8
ADMM_SOLVER_TOL = 1e-6


class InfeasibleModelError(ModelError):
    """Parameterization that cannot be scheduled, with the offending slot."""

    def __init__(self, vpp, slot, reason):
        self.vpp = vpp
        self.slot = slot
        super().__init__(f"vpp {vpp}, slot {slot}: {reason}")


class SolveFailedError(RuntimeError):
    def __init__(self, name, status):
        self.status = status
        super().__init__(f"{name}: solver returned status {status!r}")


@dataclass(frozen=True)
class ProblemContext:
    """Scenario data plus the problem flavor being assembled."""

    network: NetworkConfig
    profiles: tuple[VppProfile, ...]
    mode: str = "centralized"

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if len(self.profiles) != self.network.n_vpps:
            raise ModelError(
                f"profile count {len(self.profiles)} != n_vpps {self.network.n_vpps}"
            )
        for p in self.profiles:
            if p.horizon != self.network.horizon:
                raise ModelError(f"vpp {p.id}: horizon {p.horizon} != {self.network.horizon}")

    @property
    def horizon(self) -> int:
        return self.network.horizon

    def members_all(self) -> tuple[int, ...]:
        return tuple(range(self.network.n_vpps))

    def workload_equivalent(self, i, beta=None) -> np.ndarray:
        beta = self.network.beta if beta is None else beta
        return np.array(
            [pessimistic_value(t, beta) for t in self.profiles[i].workload_fuzzy]
        )

    def pv_equivalent(self, i, beta=None) -> np.ndarray:
        beta = self.network.beta if beta is None else beta
        return np.array([optimistic_value(t, beta) for t in self.profiles[i].pv_fuzzy])

    def pv_cost_constant(self, i) -> float:
        """PV energy charged at its modal output; constant in beta."""
        p = self.profiles[i]
        return p.pv_unit_cost * sum(t.b for t in p.pv_fuzzy)


@dataclass
class AdmmGlobals:
    """Global consensus variables, all tensors indexed [t, i, j] / [i, t]."""

    mig_workload: np.ndarray  # (T, N, N)
    mig_energy: np.ndarray  # (T, N, N)
    grid_buy: np.ndarray  # (N, T)


@dataclass
class AdmmDuals:
    y_workload: np.ndarray  # (T, N, N)
    y_energy: np.ndarray  # (T, N, N)
    y_grid: np.ndarray  # (N, T)


@dataclass(frozen=True)
class AdmmPenalty:
    """Per-family quadratic penalty weights (consensus scaling baked in)."""

    workload: float
    energy: float
    grid: float

    @classmethod
    def uniform(cls, rho) -> "AdmmPenalty":
        return cls(rho, rho, rho)


def _as_penalty(penalty) -> AdmmPenalty:
    if isinstance(penalty, AdmmPenalty):
        return penalty
    return AdmmPenalty.uniform(float(penalty))


def _qos_scale(lam_t) -> float:
    """Internal scaling of the delay variables, z_stored = z * sigma."""
    return max(float(lam_t), 1.0)


# ------------------------------------------------------------------ builders


def _check_capacity(ctx, members):
    relief = (len(members) - 1) * ctx.network.lambda_cap
    for i in members:
        fleet = ctx.profiles[i].fleet
        lam = ctx.workload_equivalent(i)
        for t in range(ctx.horizon):
            if fleet.s_max * fleet.service_rate + relief < lam[t] - 1e-12:
                raise InfeasibleModelError(
                    ctx.profiles[i].id,
                    t,
                    f"fleet capacity {fleet.s_max * fleet.service_rate} cannot cover "
                    f"equivalent workload {lam[t]} even at full migration relief",
                )


def _add_private_block(prog, ctx, i, lam, pv, mig_w_row=None, fixed_w_out=None):
    """Per-VPP variables and constraints shared by every problem flavor.

    ``mig_w_row`` maps j -> variable index of outgoing workload (i, j);
    ``fixed_w_out`` is a constant per-slot outgoing workload row sum.
    Returns the variable index arrays.
    """
    p = ctx.profiles[i]
    fleet, bess = p.fleet, p.bess
    T = ctx.horizon
    overhead = fleet.overhead_power
    marginal = fleet.marginal_power

    s = [prog.add_var(f"s[{i},{t}]", lb=1.0, ub=fleet.s_max, integer=True) for t in range(T)]
    pb = [prog.add_var(f"pb[{i},{t}]", lb=0.0) for t in range(T)]
    qch = [prog.add_var(f"qch[{i},{t}]", lb=0.0, ub=bess.q_ch_max) for t in range(T)]
    qdis = [prog.add_var(f"qdis[{i},{t}]", lb=0.0, ub=bess.q_dis_max) for t in range(T)]
    eb = [
        prog.add_var(f"eb[{i},{t}]", lb=0.0, ub=p.batch_slot_cap) for t in range(T)
    ]
    soc = [
        prog.add_var(f"soc[{i},{t}]", lb=bess.soc_min, ub=bess.soc_max) for t in range(T)
    ]
    z = [prog.add_var(f"z[{i},{t}]", lb=0.0) for t in range(T)]
    w = [prog.add_var(f"w[{i},{t}]", lb=0.0) for t in range(T)]

    for t in range(T):
        w_out_const = 0.0 if fixed_w_out is None else fixed_w_out[t]

        # fleet capacity over the credibility-equivalent load
        cap_row = {s[t]: -fleet.service_rate}
        if mig_w_row:
            for j, idx in mig_w_row.items():
                cap_row[idx[t]] = -1.0
        prog.add_le(cap_row, -(lam[t] - w_out_const))

        # effective load stays nonnegative
        if mig_w_row:
            prog.add_le({idx[t]: 1.0 for idx in mig_w_row.values()}, lam[t])

        # queueing delay cones, only where the delay cost is active; the
        # z/w variables are stored scaled by sigma = workload magnitude so
        # every cone row stays O(1)
        weight = fleet.delay_cost * lam[t]
        if weight > 0:
            sigma = _qos_scale(lam[t])
            # spare/sigma = (s*u - (lam - outgoing migration)) / sigma
            spare = {s[t]: fleet.service_rate / sigma}
            if mig_w_row:
                for j, idx in mig_w_row.items():
                    spare[idx[t]] = 1.0 / sigma
            spare_const = -(lam[t] - w_out_const) / sigma
            head = dict(spare)
            head[z[t]] = head.get(z[t], 0.0) + 1.0
            tail_mid = {z[t]: 1.0}
            for k, v in spare.items():
                tail_mid[k] = tail_mid.get(k, 0.0) - v
            prog.add_soc(
                (head, spare_const),
                [({}, 2.0), (tail_mid, -spare_const)],
            )
            prog.add_soc(
                ({w[t]: 1.0}, 1.0),
                [({z[t]: 2.0}, 0.0), ({w[t]: 1.0}, -1.0)],
            )
            prog.add_objective({w[t]: weight / sigma**2})

        # battery state recursion
        row = {
            soc[t]: 1.0,
            qch[t]: -bess.eff_ch / bess.capacity,
            qdis[t]: 1.0 / (bess.eff_dis * bess.capacity),
        }
        if t == 0:
            prog.add_eq(row, (1.0 - bess.self_discharge) * bess.soc_init)
        else:
            row[soc[t - 1]] = -(1.0 - bess.self_discharge)
            prog.add_eq(row, 0.0)

    # cyclic battery condition and batch energy budget
    prog.add_eq({soc[T - 1]: 1.0}, bess.soc_init)
    prog.add_eq({idx: 1.0 for idx in eb}, p.batch_energy_total)

    # objective: grid purchases, battery degradation, PV energy constant
    for t in range(T):
        prog.add_objective({pb[t]: p.price_buy[t], qch[t]: bess.degr_cost, qdis[t]: bess.degr_cost})
    prog.add_objective({}, ctx.pv_cost_constant(i))

    return {"s": s, "pb": pb, "qch": qch, "qdis": qdis, "eb": eb, "soc": soc, "z": z, "w": w,
            "overhead": overhead, "marginal": marginal}


def build_coalition(ctx: ProblemContext, members, fixed_migration: MigrationTensor | None = None,
                    name=None, zero_force=None) -> ConicProgram:
    """Cooperative scheduling problem restricted to ``members``.

    A singleton coalition reduces exactly to the independent problem.
    ``fixed_migration`` pins the transfer tensors to constants (used to
    polish an ADMM solution into an exactly feasible point).
    ``zero_force`` maps (vpp, slot) to "charge" or "discharge" for
    complementarity cuts added after a violating solve.
    """
    members = tuple(sorted(members))
    if not members:
        raise ModelError("coalition must be nonempty")
    net = ctx.network
    T = ctx.horizon
    _check_capacity(ctx, members)

    prog = ConicProgram(name or f"coalition{list(members)}")
    prog.meta = {"members": list(members), "horizon": T,
                 "mode": "independent" if len(members) == 1 else "centralized"}

    # migration variables with antisymmetry and sign splits
    mig = {}
    if len(members) >= 2 and fixed_migration is None:
        for i in members:
            for j in members:
                if i == j:
                    continue
                for tag, cap, weight in (
                    ("mw", net.lambda_cap, net.w_workload),
                    ("me", net.power_cap, net.w_energy),
                ):
                    full = [
                        prog.add_var(f"{tag}[{i},{j},{t}]", lb=-cap, ub=cap) for t in range(T)
                    ]
                    pos = [
                        prog.add_var(f"{tag}p[{i},{j},{t}]", lb=0.0, ub=cap) for t in range(T)
                    ]
                    neg = [
                        prog.add_var(f"{tag}m[{i},{j},{t}]", lb=0.0, ub=cap) for t in range(T)
                    ]
                    mig[(tag, i, j)] = full
                    for t in range(T):
                        prog.add_eq({full[t]: 1.0, pos[t]: -1.0, neg[t]: 1.0}, 0.0)
                        prog.add_objective({pos[t]: weight * net.distance[i][j]})
        for a, i in enumerate(members):
            for j in members[a + 1:]:
                for tag in ("mw", "me"):
                    for t in range(T):
                        prog.add_eq(
                            {mig[(tag, i, j)][t]: 1.0, mig[(tag, j, i)][t]: 1.0}, 0.0
                        )

    blocks = {}
    for i in members:
        lam = ctx.workload_equivalent(i)
        pv = ctx.pv_equivalent(i)
        mig_w_row = None
        fixed_w_out = None
        fixed_e_in = None
        if len(members) >= 2:
            if fixed_migration is None:
                mig_w_row = {j: mig[("mw", i, j)] for j in members if j != i}
            else:
                fixed_w_out = fixed_migration.workload[:, i, :].sum(axis=1)
                fixed_e_in = fixed_migration.energy[:, i, :].sum(axis=1)
                if (lam - fixed_w_out).min() < -1e-6:
                    t_bad = int(np.argmin(lam - fixed_w_out))
                    raise InfeasibleModelError(
                        ctx.profiles[i].id, t_bad, "fixed migration exceeds equivalent workload"
                    )
        blk = _add_private_block(prog, ctx, i, lam, pv, mig_w_row, fixed_w_out)
        blocks[i] = blk

        # power balance with the credibility-equivalent load and PV
        for t in range(T):
            row = {
                blk["s"][t]: blk["overhead"],
                blk["qch"][t]: 1.0,
                blk["qdis"][t]: -1.0,
                blk["pb"][t]: -1.0,
                blk["eb"][t]: 1.0,
            }
            rhs = pv[t] - blk["marginal"] * lam[t]
            if len(members) >= 2 and fixed_migration is None:
                for j in members:
                    if j == i:
                        continue
                    row[mig[("me", i, j)][t]] = 1.0
                    row[mig[("mw", i, j)][t]] = -blk["marginal"]
            elif fixed_w_out is not None:
                rhs += blk["marginal"] * fixed_w_out[t] - fixed_e_in[t]
            prog.add_le(row, rhs)

    if fixed_migration is not None and len(members) >= 2:
        prog.add_objective(
            {}, sum(migration_cost(net, fixed_migration, i) for i in members)
        )

    # aggregate demand-response tracking and load normalization
    capacity = sum(ctx.profiles[i].declared_capacity for i in members)
    d = prog.add_var("d", lb=0.0)
    tail = []
    for t in range(T):
        row = {blocks[i]["pb"][t]: 1.0 / capacity for i in members}
        tail.append((row, -net.cdl[t]))
    prog.add_soc(({d: 1.0}, 0.0), tail)
    prog.add_eq(
        {blocks[i]["pb"][t]: 1.0 for i in members for t in range(T)}, capacity
    )
    prog.add_objective({d: net.dr_price * capacity}, -net.dr_price * capacity)

    if zero_force:
        for (i, t), side in zero_force.items():
            tag = "qch" if side == "charge" else "qdis"
            prog.add_le({prog.var(f"{tag}[{i},{t}]"): 1.0}, 0.0)
    return prog


def build_independent(ctx: ProblemContext, vpp) -> ConicProgram:
    """Standalone scheduling problem for one VPP."""
    return build_coalition(ctx, (vpp,), name=f"independent[{vpp}]")


def build_centralized(ctx: ProblemContext) -> ConicProgram:
    """Grand-coalition cooperative problem (the ADMM oracle)."""
    return build_coalition(ctx, ctx.members_all(), name="centralized")


def build_admm_local(ctx: ProblemContext, vpp, globals_: AdmmGlobals, duals: AdmmDuals,
                     penalty) -> ConicProgram:
    """Local consensus subproblem for one VPP.

    Carries the VPP's own constraints and migration-cost terms plus the
    linear dual terms and quadratic consensus penalties against the
    current global copies.  The aggregate DR term lives in the global
    load subproblem.
    """
    pen = _as_penalty(penalty)
    net = ctx.network
    T = ctx.horizon
    i = vpp
    others = [j for j in ctx.members_all() if j != i]
    _check_capacity(ctx, (i,) if not others else ctx.members_all())

    prog = ConicProgram(f"admm_local[{i}]")
    prog.meta = {"members": [i], "horizon": T, "mode": "admm_local"}
    lam = ctx.workload_equivalent(i)
    pv = ctx.pv_equivalent(i)

    mig_rows = {}
    const = 0.0
    for j in others:
        for tag, cap, weight, y, g in (
            ("mw", net.lambda_cap, net.w_workload, duals.y_workload, globals_.mig_workload),
            ("me", net.power_cap, net.w_energy, duals.y_energy, globals_.mig_energy),
        ):
            full = [prog.add_var(f"{tag}[{i},{j},{t}]", lb=-cap, ub=cap) for t in range(T)]
            pos = [prog.add_var(f"{tag}p[{i},{j},{t}]", lb=0.0, ub=cap) for t in range(T)]
            neg = [prog.add_var(f"{tag}m[{i},{j},{t}]", lb=0.0, ub=cap) for t in range(T)]
            mig_rows[(tag, j)] = full
            for t in range(T):
                prog.add_eq({full[t]: 1.0, pos[t]: -1.0, neg[t]: 1.0}, 0.0)
                prog.add_objective(
                    {pos[t]: weight * net.distance[i][j], full[t]: y[t, i, j]}
                )
                const -= y[t, i, j] * g[t, i, j]

    mig_w_row = {j: mig_rows[("mw", j)] for j in others} if others else None
    blk = _add_private_block(prog, ctx, i, lam, pv, mig_w_row)

    for t in range(T):
        row = {
            blk["s"][t]: blk["overhead"],
            blk["qch"][t]: 1.0,
            blk["qdis"][t]: -1.0,
            blk["pb"][t]: -1.0,
            blk["eb"][t]: 1.0,
        }
        for j in others:
            row[mig_rows[("me", j)][t]] = 1.0
            row[mig_rows[("mw", j)][t]] = -blk["marginal"]
        prog.add_le(row, pv[t] - blk["marginal"] * lam[t])

    # dual terms on the purchased-power copy
    for t in range(T):
        prog.add_objective({blk["pb"][t]: duals.y_grid[i, t]})
        const -= duals.y_grid[i, t] * globals_.grid_buy[i, t]
    prog.add_objective({}, const)

    # consensus penalty (1/2)*sum(rho_fam * gap^2) as one epigraph cone
    tau = prog.add_var("tau", lb=0.0)
    tail = []
    for j in others:
        rw = math.sqrt(pen.workload)
        re = math.sqrt(pen.energy)
        for t in range(T):
            tail.append(({mig_rows[("mw", j)][t]: rw}, -rw * globals_.mig_workload[t, i, j]))
            tail.append(({mig_rows[("me", j)][t]: re}, -re * globals_.mig_energy[t, i, j]))
    rb = math.sqrt(pen.grid)
    for t in range(T):
        tail.append(({blk["pb"][t]: rb}, -rb * globals_.grid_buy[i, t]))
    tail.append(({tau: 0.5}, -0.5))
    prog.add_soc(({tau: 0.5}, 0.5), tail)
    prog.add_objective({tau: 0.5})
    return prog


def build_admm_global_load(ctx: ProblemContext, local_grid_buy, y_grid, penalty) -> ConicProgram:
    """Global purchased-power coordination with the aggregate DR term."""
    pen = _as_penalty(penalty)
    net = ctx.network
    T = ctx.horizon
    members = ctx.members_all()
    capacity = sum(p.declared_capacity for p in ctx.profiles)

    prog = ConicProgram("admm_global_load")
    prog.meta = {"members": list(members), "horizon": T, "mode": "admm_global"}
    g = {
        (i, t): prog.add_var(f"gpb[{i},{t}]", lb=0.0) for i in members for t in range(T)
    }
    d = prog.add_var("d", lb=0.0)
    tau = prog.add_var("tau", lb=0.0)

    tail = [
        ({g[(i, t)]: 1.0 / capacity for i in members}, -net.cdl[t]) for t in range(T)
    ]
    prog.add_soc(({d: 1.0}, 0.0), tail)
    prog.add_eq({idx: 1.0 for idx in g.values()}, capacity)

    rb = math.sqrt(pen.grid)
    pen_tail = [
        ({g[(i, t)]: rb}, -rb * local_grid_buy[i, t]) for i in members for t in range(T)
    ]
    pen_tail.append(({tau: 0.5}, -0.5))
    prog.add_soc(({tau: 0.5}, 0.5), pen_tail)

    const = -net.dr_price * capacity
    for i in members:
        for t in range(T):
            prog.add_objective({g[(i, t)]: -y_grid[i, t]})
            const += y_grid[i, t] * local_grid_buy[i, t]
    prog.add_objective({d: net.dr_price * capacity, tau: 0.5}, const)
    return prog


def update_globals_migration(local_workload, local_energy, duals: AdmmDuals, penalty,
                             lambda_cap, power_cap):
    """Closed-form antisymmetric global migration update.

    For each ordered pair the consensus minimizer is the antisymmetrized
    average of the two owners' copies shifted by the dual imbalance, then
    projected onto the capacity box.  The mirrored entry is set to the
    exact negation, so antisymmetry holds bitwise.
    """
    pen = _as_penalty(penalty)

    def solve_family(loc, y, rho, cap):
        raw = 0.5 * (loc - loc.transpose(0, 2, 1)) + (y - y.transpose(0, 2, 1)) / (2.0 * rho)
        clipped = np.clip(raw, -cap, cap)
        out = np.zeros_like(loc)
        T, n, _ = loc.shape
        iu, ju = np.triu_indices(n, 1)
        out[:, iu, ju] = clipped[:, iu, ju]
        out[:, ju, iu] = -clipped[:, iu, ju]
        return out

    g_w = solve_family(local_workload, duals.y_workload, pen.workload, lambda_cap)
    g_e = solve_family(local_energy, duals.y_energy, pen.energy, power_cap)
    return g_w, g_e


# ------------------------------------------------------------------ solving


@dataclass
class CoalitionSolution:
    """A solved (and extracted) coalition scheduling problem."""

    ctx: ProblemContext
    members: tuple[int, ...]
    program: ConicProgram
    outcome: SolveOutcome
    schedules: dict[int, ScheduleDecision]
    migration: MigrationTensor
    dr: DrMetrics
    objective: float


def _values(prog, outcome, names):
    return np.array([outcome.primal[prog.var(n)] for n in names])


def extract_schedule(prog: ConicProgram, outcome: SolveOutcome, ctx: ProblemContext, i,
                     migration: MigrationTensor | None = None) -> ScheduleDecision:
    T = ctx.horizon
    get = lambda tag: _values(prog, outcome, [f"{tag}[{i},{t}]" for t in range(T)])
    servers = get("s")
    lam = ctx.workload_equivalent(i)
    outgoing = migration.workload[:, i, :].sum(axis=1) if migration is not None else 0.0
    effective = lam - outgoing
    util = effective / (servers * ctx.profiles[i].fleet.service_rate)
    sigma = np.array([_qos_scale(v) for v in lam])
    return ScheduleDecision(
        servers=servers,
        grid_buy=get("pb"),
        charge=get("qch"),
        discharge=get("qdis"),
        batch=get("eb"),
        soc=get("soc"),
        qos_aux=get("z") / sigma,
        utilization=util,
    )


def extract_migration(prog: ConicProgram, outcome: SolveOutcome, ctx: ProblemContext,
                      members) -> MigrationTensor:
    T = ctx.horizon
    n = ctx.network.n_vpps
    tensor = MigrationTensor.zeros(T, n)
    if len(members) < 2 or not prog.has_var(f"mw[{members[0]},{members[1]},0]"):
        return tensor
    for i in members:
        for j in members:
            if i == j:
                continue
            tensor.workload[:, i, j] = _values(
                prog, outcome, [f"mw[{i},{j},{t}]" for t in range(T)]
            )
            tensor.energy[:, i, j] = _values(
                prog, outcome, [f"me[{i},{j},{t}]" for t in range(T)]
            )
    return tensor


def solve_coalition(ctx: ProblemContext, members, tolerance=DEFAULT_SOLVER_TOL,
                    fixed_migration: MigrationTensor | None = None,
                    zero_force=None) -> CoalitionSolution:
    members = tuple(sorted(members))
    prog = build_coalition(ctx, members, fixed_migration=fixed_migration, zero_force=zero_force)
    outcome = solve(prog, tolerance=tolerance)
    if not outcome.optimal:
        raise SolveFailedError(prog.name, outcome.status)
    migration = (
        fixed_migration
        if fixed_migration is not None
        else extract_migration(prog, outcome, ctx, members)
    )
    schedules = {i: extract_schedule(prog, outcome, ctx, i, migration) for i in members}
    capacity = sum(ctx.profiles[i].declared_capacity for i in members)
    total_buy = np.sum([schedules[i].grid_buy for i in members], axis=0)
    dr = dr_metrics(total_buy, capacity, ctx.network.cdl, ctx.network.dr_price)
    return CoalitionSolution(
        ctx=ctx,
        members=members,
        program=prog,
        outcome=outcome,
        schedules=schedules,
        migration=migration,
        dr=dr,
        objective=outcome.objective_value,
    )


def coalition_objective(ctx: ProblemContext, members, schedules, migration: MigrationTensor,
                        dr: DrMetrics) -> float:
    """Objective value recomputed from extracted quantities."""
    net = ctx.network
    total = 0.0
    for i in members:
        p = ctx.profiles[i]
        sch = schedules[i]
        lam = ctx.workload_equivalent(i)
        total += float(np.dot(p.price_buy, sch.grid_buy))
        total += p.bess.degr_cost * float(np.sum(sch.charge + sch.discharge))
        total += p.fleet.delay_cost * float(np.dot(lam, sch.qos_aux**2))
        total += ctx.pv_cost_constant(i)
        total += migration_cost(net, migration, i)
    total -= dr.incentive
    return total


def centralized_assignment(ctx: ProblemContext, solution: CoalitionSolution,
                           reference: ConicProgram) -> dict:
    """Full variable assignment of ``solution`` for the centralized program."""
    values = {}
    members = solution.members
    T = ctx.horizon
    for i in members:
        sch = solution.schedules[i]
        lam = ctx.workload_equivalent(i)
        for t in range(T):
            sigma = _qos_scale(lam[t])
            values[f"s[{i},{t}]"] = sch.servers[t]
            values[f"pb[{i},{t}]"] = sch.grid_buy[t]
            values[f"qch[{i},{t}]"] = sch.charge[t]
            values[f"qdis[{i},{t}]"] = sch.discharge[t]
            values[f"eb[{i},{t}]"] = sch.batch[t]
            values[f"soc[{i},{t}]"] = sch.soc[t]
            values[f"z[{i},{t}]"] = sch.qos_aux[t] * sigma
            values[f"w[{i},{t}]"] = (sch.qos_aux[t] * sigma) ** 2
    for i in members:
        for j in members:
            if i == j:
                continue
            for t in range(T):
                mw = solution.migration.workload[t, i, j]
                me = solution.migration.energy[t, i, j]
                values[f"mw[{i},{j},{t}]"] = mw
                values[f"mwp[{i},{j},{t}]"] = max(mw, 0.0)
                values[f"mwm[{i},{j},{t}]"] = max(-mw, 0.0)
                values[f"me[{i},{j},{t}]"] = me
                values[f"mep[{i},{j},{t}]"] = max(me, 0.0)
                values[f"mem[{i},{j},{t}]"] = max(-me, 0.0)
    capacity = sum(ctx.profiles[i].declared_capacity for i in members)
    total_buy = np.sum([solution.schedules[i].grid_buy for i in members], axis=0)
    values["d"] = float(np.linalg.norm(total_buy / capacity - np.asarray(ctx.network.cdl)))
    return {name: values[name] for name in reference.var_names}


# ------------------------------------------------------------------ rounding


@dataclass
class RoundingReport:
    """Ceiling-rounded server counts with a first-order cost bound.

    The bound prices each fractional server-slot at its balance-side
    sensitivity: the overhead energy bought at the grid price plus the
    worst-case DR-similarity loss.  The queueing-delay term only falls
    when servers are added, so it is left out to keep the bound one-sided.
    """

    members: tuple[int, ...]
    continuous_servers: np.ndarray  # (len(members), T)
    rounded_servers: np.ndarray  # (len(members), T) integers
    objective_gap_bound: float
    continuous_objective: float
    realized_objective: float
    schedules: dict[int, ScheduleDecision]  # recomputed at the rounded counts
    dr: DrMetrics

    @property
    def realized_gap(self) -> float:
        return self.realized_objective - self.continuous_objective


_SNAP = 1e-6


def round_servers(solution: CoalitionSolution) -> RoundingReport:
    """Round the relaxed server counts up and recompute dependent quantities.

    Purchases absorb the extra overhead power wherever the balance was
    binding, delay variables are retightened, and the DR distance is
    re-evaluated on the adjusted purchases.
    """
    ctx = solution.ctx
    net = ctx.network
    members = solution.members
    T = ctx.horizon

    cont = np.array([solution.schedules[i].servers for i in members])
    snapped = np.where(np.abs(cont - np.round(cont)) < _SNAP, np.round(cont), cont)
    rounded = np.ceil(snapped)

    bound = 0.0
    new_schedules = {}
    capacity = sum(ctx.profiles[i].declared_capacity for i in members)
    delta_private = 0.0
    for k, i in enumerate(members):
        p = ctx.profiles[i]
        fleet = p.fleet
        if rounded[k].max() > fleet.s_max + 1e-9:
            t_bad = int(np.argmax(rounded[k]))
            raise InfeasibleModelError(p.id, t_bad, "rounding exhausts the server capacity")
        sch = solution.schedules[i]
        lam = ctx.workload_equivalent(i)
        pv = ctx.pv_equivalent(i)
        outgoing = solution.migration.workload[:, i, :].sum(axis=1)
        incoming_e = solution.migration.energy[:, i, :].sum(axis=1)
        effective = lam - outgoing
        frac_gap = rounded[k] - snapped[k]
        prices = np.asarray(p.price_buy)
        bound += float(np.dot(fleet.overhead_power * (prices + net.dr_price), frac_gap))

        required = (
            fleet.overhead_power * rounded[k]
            + fleet.marginal_power * effective
            + sch.batch
            + sch.charge
            - sch.discharge
            + incoming_e
            - pv
        )
        new_buy = np.maximum(sch.grid_buy, required)
        spare = rounded[k] * fleet.service_rate - effective
        new_z = np.where(
            (fleet.delay_cost * lam > 0) & (spare > 0), 1.0 / np.maximum(spare, 1e-12), 0.0
        )
        new_schedules[i] = ScheduleDecision(
            servers=rounded[k].astype(int),
            grid_buy=new_buy,
            charge=sch.charge.copy(),
            discharge=sch.discharge.copy(),
            batch=sch.batch.copy(),
            soc=sch.soc.copy(),
            qos_aux=new_z,
            utilization=effective / (rounded[k] * fleet.service_rate),
        )
        delta_private += float(np.dot(prices, new_buy - sch.grid_buy))
        delta_private += fleet.delay_cost * float(np.dot(lam, new_z**2 - sch.qos_aux**2))

    total_buy = np.sum([new_schedules[i].grid_buy for i in members], axis=0)
    new_dr = dr_metrics(total_buy, capacity, net.cdl, net.dr_price)
    realized = (
        solution.objective + delta_private - (new_dr.incentive - solution.dr.incentive)
    )
    return RoundingReport(
        members=members,
        continuous_servers=cont,
        rounded_servers=rounded.astype(int),
        objective_gap_bound=bound,
        continuous_objective=solution.objective,
        realized_objective=realized,
        schedules=new_schedules,
        dr=new_dr,
    )


# ------------------------------------------------------------------ checks

BESS_COMPLEMENTARITY_TOL = 1e-6


def enforce_bess_complementarity(solution: CoalitionSolution,
                                 tol=BESS_COMPLEMENTARITY_TOL) -> CoalitionSolution:
    """Re-solve with zero-forcing cuts if any slot charges and discharges.

    With a positive degradation cost and a lossy round trip this never
    binds at an optimum; the cut path exists for degenerate parameter
    sets (free cycling).
    """
    cuts = {}
    for i in solution.members:
        sch = solution.schedules[i]
        overlap = np.minimum(sch.charge, sch.discharge)
        for t in np.nonzero(overlap > tol)[0]:
            cuts[(i, int(t))] = "discharge" if sch.charge[t] >= sch.discharge[t] else "charge"
    if not cuts:
        return solution
    members = solution.members
    migration_was_fixed = len(members) >= 2 and not solution.program.has_var(
        f"mw[{members[0]},{members[1]},0]"
    )
    return solve_coalition(
        solution.ctx,
        members,
        fixed_migration=solution.migration if migration_was_fixed else None,
        zero_force=cuts,
    )


def structural_report(solution: CoalitionSolution) -> dict:
    """Named violation magnitudes of the scheduling invariants.

    Keys map to the largest absolute violation found; a converged run
    should show every entry at numerical-noise level.
    """
    ctx = solution.ctx
    net = ctx.network
    members = solution.members
    report = {
        "migration_antisymmetry": solution.migration.antisymmetry_violation(),
        "migration_net_transfer": solution.migration.net_transfer_violation(),
        "migration_caps": solution.migration.cap_violation(net.lambda_cap, net.power_cap),
    }
    soc_cyc = soc_rec = qos = compl = balance = 0.0
    from .model import bess_step  # local import keeps module load cheap

    for i in members:
        p = ctx.profiles[i]
        sch = solution.schedules[i]
        bess = p.bess
        soc_cyc = max(soc_cyc, abs(sch.soc[-1] - bess.soc_init))
        level = bess.soc_init
        for t in range(ctx.horizon):
            level = bess_step(bess, level, sch.charge[t], sch.discharge[t])
            soc_rec = max(soc_rec, abs(level - sch.soc[t]))
        compl = max(compl, float(np.minimum(sch.charge, sch.discharge).max(initial=0.0)))

        lam = ctx.workload_equivalent(i)
        pv = ctx.pv_equivalent(i)
        outgoing = solution.migration.workload[:, i, :].sum(axis=1)
        incoming_e = solution.migration.energy[:, i, :].sum(axis=1)
        effective = lam - outgoing
        spare = sch.servers * p.fleet.service_rate - effective
        active = (p.fleet.delay_cost * lam > 0) & (spare > 0)
        if active.any():
            qos = max(qos, float(np.abs(sch.qos_aux[active] - 1.0 / spare[active]).max()))
        lhs = (
            p.fleet.overhead_power * sch.servers
            + p.fleet.marginal_power * effective
            + sch.batch
            + sch.charge
            - sch.discharge
            + incoming_e
            - pv
            - sch.grid_buy
        )
        balance = max(balance, float(lhs.max(initial=0.0)))

    capacity = sum(ctx.profiles[i].declared_capacity for i in members)
    total_buy = np.sum([solution.schedules[i].grid_buy for i in members], axis=0)
    report.update(
        soc_cyclic=soc_cyc,
        soc_recursion=soc_rec,
        qos_tightness=qos,
        bess_complementarity=compl,
        power_balance=balance,
        load_normalization=abs(float(total_buy.sum()) - capacity),
    )
    return report
