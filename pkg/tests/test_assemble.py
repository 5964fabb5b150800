import numpy as np
import pytest

from vppcoop.fuzzy import FuzzyTriple
from vppcoop.model import MigrationTensor, ScheduleDecision, dr_metrics
from vppcoop.assemble import (
    AdmmDuals,
    AdmmGlobals,
    AdmmPenalty,
    InfeasibleModelError,
    ProblemContext,
    build_admm_global_load,
    build_admm_local,
    build_centralized,
    build_coalition,
    build_independent,
    coalition_objective,
    enforce_bess_complementarity,
    round_servers,
    solve_coalition,
    structural_report,
    update_globals_migration,
)
from vppcoop.program import check_feasibility, solve

from conftest import make_fleet, make_bess, make_network, make_profile, two_vpp_context


def crisp(v):
    return FuzzyTriple(v, v, v)


# -------------------------------------------------------- defuzzification


def test_beta_half_recovers_modal_program():
    ctx = two_vpp_context(beta=0.5)
    crisp_profiles = tuple(
        make_profile(
            p.id,
            [t.b for t in p.workload_fuzzy],
            [t.b for t in p.pv_fuzzy],
            p.price_buy,
            p.declared_capacity,
            spread=0.0,
        )
        for p in ctx.profiles
    )
    nominal = ProblemContext(network=ctx.network, profiles=crisp_profiles)
    assert build_independent(ctx, 0).dump_text() == build_independent(nominal, 0).dump_text()


def test_beta_one_pins_worst_case():
    ctx = two_vpp_context(beta=1.0)
    lam = ctx.workload_equivalent(0)
    pv = ctx.pv_equivalent(0)
    assert np.allclose(lam, [t.c for t in ctx.profiles[0].workload_fuzzy])
    assert np.allclose(pv, [t.a for t in ctx.profiles[0].pv_fuzzy])


def test_single_slot_toy_matches_enumeration():
    fleet = make_fleet(service_rate=10.0, s_max=20, delay_cost=0.0, e_idle=0.1, e_peak=0.2, pue=1.0)
    bess = make_bess(q_ch_max=0.0, q_dis_max=0.0, self_discharge=0.0)
    # P^D set to the power draw at the minimal feasible fleet size
    s_opt = 10
    p_opt = s_opt * 0.1 + (0.2 - 0.1) / 10.0 * 100.0
    profile = make_profile(
        "toy", [100.0], [0.0], [1.0], capacity=p_opt, fleet=fleet, bess=bess,
        batch=0.0, spread=0.0,
    )
    net = make_network(1, 1, cdl=(1.0,), lambda_cap=0.0, power_cap=0.0, dr_price=0.05)
    ctx = ProblemContext(network=net, profiles=(profile,))
    sol = solve_coalition(ctx, (0,))

    # brute force over integer fleet sizes: buy exactly P^D, need dc power <= P^D
    feasible = []
    for s in range(1, 21):
        if s * 10.0 < 100.0:
            continue
        draw = s * 0.1 + 0.1 / 10.0 * 100.0
        if draw <= p_opt + 1e-9:
            feasible.append((1.0 * p_opt - 0.05 * p_opt, s))
    expected_obj, expected_s = min(feasible)
    assert sol.schedules[0].servers[0] == pytest.approx(expected_s, abs=1e-5)
    assert sol.schedules[0].grid_buy[0] == pytest.approx(p_opt, abs=1e-7)
    assert sol.objective == pytest.approx(expected_obj, abs=1e-6)


# -------------------------------------------------------- coalition programs


def test_caps_zero_identical_equals_sum_of_independents():
    ctx = two_vpp_context(identical=True, lambda_cap=0.0, power_cap=0.0)
    indep = [solve_coalition(ctx, (i,)).objective for i in range(2)]
    coop = solve_coalition(ctx, (0, 1))
    assert coop.objective == pytest.approx(sum(indep), abs=1e-6)
    assert np.abs(coop.migration.workload).max() <= 1e-9
    assert np.abs(coop.migration.energy).max() <= 1e-9


def test_identical_pair_has_zero_migration_optimum():
    ctx = two_vpp_context(identical=True)
    coop = solve_coalition(ctx, (0, 1))
    autarky = solve_coalition(ctx, (0, 1), fixed_migration=MigrationTensor.zeros(6, 2))
    assert coop.objective == pytest.approx(autarky.objective, abs=1e-6)


def test_cooperation_weakly_dominates():
    ctx = two_vpp_context()
    indep = sum(solve_coalition(ctx, (i,)).objective for i in range(2))
    coop = solve_coalition(ctx, (0, 1)).objective
    assert coop <= indep + 1e-9


def test_objective_recomputation_matches_solver():
    ctx = two_vpp_context()
    sol = solve_coalition(ctx, (0, 1))
    recomputed = coalition_objective(ctx, sol.members, sol.schedules, sol.migration, sol.dr)
    assert recomputed == pytest.approx(sol.objective, abs=1e-6)


def test_solver_point_feasible():
    ctx = two_vpp_context()
    sol = solve_coalition(ctx, (0, 1))
    assert check_feasibility(sol.program, sol.outcome.primal) <= 1e-7


def test_beta_monotone_cost():
    base = two_vpp_context()
    costs = []
    for beta in (0.5, 0.75, 0.9, 0.95):
        net = make_network(2, 6, beta=beta)
        ctx = ProblemContext(network=net, profiles=base.profiles)
        costs.append(solve_coalition(ctx, (0,)).objective)
    for lo, hi in zip(costs, costs[1:]):
        assert hi >= lo - 1e-6


def test_infeasible_capacity_reports_slot():
    fleet = make_fleet(s_max=2, service_rate=10.0)
    profile = make_profile("tiny", [900, 1100], [0, 0], [0.1, 0.1], 50.0, fleet=fleet)
    net = make_network(1, 2, cdl=(0.5, 0.5), lambda_cap=0.0, power_cap=0.0)
    ctx = ProblemContext(network=net, profiles=(profile,))
    with pytest.raises(InfeasibleModelError) as err:
        build_independent(ctx, 0)
    assert err.value.slot == 0


def test_structural_report_clean_on_solution():
    ctx = two_vpp_context()
    sol = solve_coalition(ctx, (0, 1))
    rep = structural_report(sol)
    assert rep["migration_antisymmetry"] <= 1e-9
    assert rep["migration_net_transfer"] <= 1e-9
    assert rep["migration_caps"] <= 1e-9
    assert rep["soc_cyclic"] <= 1e-6
    assert rep["soc_recursion"] <= 1e-6
    assert rep["qos_tightness"] <= 1e-6
    assert rep["bess_complementarity"] <= 1e-6
    assert rep["power_balance"] <= 1e-6
    assert rep["load_normalization"] <= 1e-6


def test_enforce_bess_complementarity_noop_when_clean():
    ctx = two_vpp_context()
    sol = solve_coalition(ctx, (0,))
    assert enforce_bess_complementarity(sol) is sol


# -------------------------------------------------------- ADMM subproblems


def zero_state(ctx):
    T, n = ctx.horizon, ctx.network.n_vpps
    globals_ = AdmmGlobals(np.zeros((T, n, n)), np.zeros((T, n, n)), np.zeros((n, T)))
    duals = AdmmDuals(np.zeros((T, n, n)), np.zeros((T, n, n)), np.zeros((n, T)))
    return globals_, duals


def test_local_caps_zero_pins_migration():
    ctx = two_vpp_context(lambda_cap=0.0, power_cap=0.0)
    globals_, duals = zero_state(ctx)
    prog = build_admm_local(ctx, 0, globals_, duals, AdmmPenalty.uniform(1.0))
    out = solve(prog)
    assert out.optimal
    for t in range(6):
        assert out.primal[prog.var(f"mw[0,1,{t}]")] == pytest.approx(0.0, abs=1e-6)
        assert out.primal[prog.var(f"me[0,1,{t}]")] == pytest.approx(0.0, abs=1e-6)


def test_local_penalty_domination():
    ctx = two_vpp_context()
    coop = solve_coalition(ctx, (0, 1))
    globals_, duals = zero_state(ctx)
    globals_.mig_workload = coop.migration.workload.copy()
    globals_.mig_energy = coop.migration.energy.copy()
    globals_.grid_buy = np.array([coop.schedules[i].grid_buy for i in range(2)])
    prog = build_admm_local(ctx, 0, globals_, duals, AdmmPenalty.uniform(1e6))
    out = solve(prog)
    assert out.optimal
    for t in range(6):
        assert out.primal[prog.var(f"mw[0,1,{t}]")] == pytest.approx(
            globals_.mig_workload[t, 0, 1], abs=1e-3
        )
        assert out.primal[prog.var(f"pb[0,{t}]")] == pytest.approx(
            globals_.grid_buy[0, t], abs=1e-3
        )


def test_local_one_slot_matches_grid_oracle():
    fleet = make_fleet(service_rate=10.0, s_max=40, delay_cost=0.0, e_idle=0.1, e_peak=0.2, pue=1.0)
    bess = make_bess(q_ch_max=0.0, q_dis_max=0.0, self_discharge=0.0)
    profiles = tuple(
        make_profile(f"v{i}", [100.0], [2.0], [0.5], 40.0, fleet=fleet, bess=bess,
                     batch=0.0, spread=0.0)
        for i in range(2)
    )
    net = make_network(2, 1, cdl=(1.0,), lambda_cap=30.0, power_cap=5.0,
                       w_workload=1e-4, w_energy=1e-3)
    ctx = ProblemContext(network=net, profiles=profiles)

    globals_, duals = zero_state(ctx)
    globals_.mig_workload[0, 0, 1] = 4.0
    globals_.grid_buy[0, 0] = 10.0
    duals.y_workload[0, 0, 1] = 0.02
    duals.y_energy[0, 0, 1] = -0.01
    duals.y_grid[0, 0] = 0.05
    rho = 0.7

    prog = build_admm_local(ctx, 0, globals_, duals, AdmmPenalty.uniform(rho))
    out = solve(prog)
    assert out.optimal

    # grid over the two migration variables; purchases minimized analytically
    dist = net.distance[0][1]
    best = np.inf
    lam, pv, price = 100.0, 2.0, 0.5
    for mw in np.linspace(-30.0, 30.0, 241):
        for me in np.linspace(-5.0, 5.0, 101):
            s = max(1.0, (lam - mw) / fleet.service_rate)
            pb_min = max(
                0.0,
                fleet.overhead_power * s + fleet.marginal_power * (lam - mw) + me - pv,
            )
            pb = max(pb_min, globals_.grid_buy[0, 0] - (price + duals.y_grid[0, 0]) / rho)
            obj = (
                price * pb
                + net.w_workload * dist * max(0.0, mw)
                + net.w_energy * dist * max(0.0, me)
                + duals.y_workload[0, 0, 1] * (mw - globals_.mig_workload[0, 0, 1])
                + duals.y_energy[0, 0, 1] * (me - globals_.mig_energy[0, 0, 1])
                + duals.y_grid[0, 0] * (pb - globals_.grid_buy[0, 0])
                + 0.5 * rho * (mw - globals_.mig_workload[0, 0, 1]) ** 2
                + 0.5 * rho * (me - globals_.mig_energy[0, 0, 1]) ** 2
                + 0.5 * rho * (pb - globals_.grid_buy[0, 0]) ** 2
            )
            best = min(best, obj)
    # the program carries the dual-gap constants; only PV cost is extra
    solver_obj = out.objective_value - ctx.pv_cost_constant(0)
    grid_step = 60.0 / 240
    assert solver_obj <= best + 1e-9
    assert solver_obj >= best - 0.6 * grid_step


def test_global_migration_update_clamp():
    T, n = 1, 2
    lw = np.zeros((T, n, n))
    le = np.zeros((T, n, n))
    duals = AdmmDuals(np.zeros((T, n, n)), np.zeros((T, n, n)), np.zeros((n, T)))
    lw[0, 0, 1], lw[0, 1, 0] = 7.0, -7.0
    gw, _ = update_globals_migration(lw, le, duals, 1.0, 5.0, 5.0)
    assert gw[0, 0, 1] == 5.0 and gw[0, 1, 0] == -5.0
    lw[0, 0, 1], lw[0, 1, 0] = -7.0, 7.0
    gw, _ = update_globals_migration(lw, le, duals, 1.0, 5.0, 5.0)
    assert gw[0, 0, 1] == -5.0
    lw[0, 0, 1], lw[0, 1, 0] = 3.0, -3.0
    gw, _ = update_globals_migration(lw, le, duals, 1.0, 5.0, 5.0)
    assert gw[0, 0, 1] == 3.0


def test_global_migration_update_consensus_and_average():
    T, n = 1, 2
    le = np.zeros((T, n, n))
    duals = AdmmDuals(np.zeros((T, n, n)), np.zeros((T, n, n)), np.zeros((n, T)))
    lw = np.zeros((T, n, n))
    lw[0, 0, 1], lw[0, 1, 0] = 4.0, -4.0
    gw, _ = update_globals_migration(lw, le, duals, 2.0, 10.0, 10.0)
    assert gw[0, 0, 1] == 4.0
    lw[0, 1, 0] = -2.0
    gw, _ = update_globals_migration(lw, le, duals, 2.0, 10.0, 10.0)
    assert gw[0, 0, 1] == 3.0
    assert gw[0, 1, 0] == -3.0
    assert (gw + gw.transpose(0, 2, 1) == 0).all()


def test_global_load_identity_at_cdl_shaped_locals():
    ctx = two_vpp_context()
    cdl = np.asarray(ctx.network.cdl)
    caps = np.array([p.declared_capacity for p in ctx.profiles])
    locals_pb = np.outer(caps, cdl)
    y = np.zeros_like(locals_pb)
    prog = build_admm_global_load(ctx, locals_pb, y, AdmmPenalty.uniform(1.0))
    out = solve(prog)
    assert out.optimal
    # the DR cone sits at its apex here, so accuracy is sqrt(tolerance)
    for i in range(2):
        for t in range(6):
            assert out.primal[prog.var(f"gpb[{i},{t}]")] == pytest.approx(
                locals_pb[i, t], abs=1e-4
            )
    assert out.primal[prog.var("d")] == pytest.approx(0.0, abs=1e-4)


def test_global_load_penalty_domination():
    ctx = two_vpp_context()
    caps = np.array([p.declared_capacity for p in ctx.profiles])
    rng = np.random.default_rng(7)
    locals_pb = rng.uniform(5, 15, size=(2, 6))
    locals_pb *= caps.sum() / locals_pb.sum()  # satisfy the aggregate budget
    y = np.zeros_like(locals_pb)
    prog = build_admm_global_load(ctx, locals_pb, y, AdmmPenalty.uniform(1e7))
    out = solve(prog)
    for i in range(2):
        for t in range(6):
            assert out.primal[prog.var(f"gpb[{i},{t}]")] == pytest.approx(
                locals_pb[i, t], abs=1e-3
            )


def test_global_load_matches_grid_oracle():
    profile = make_profile("solo", [100.0, 100.0], [0, 0], [0.1, 0.1], 30.0)
    net = make_network(1, 2, cdl=(0.6, 0.4), dr_price=0.2)
    ctx = ProblemContext(network=net, profiles=(profile,))
    locals_pb = np.array([[20.0, 10.0]])
    y = np.array([[0.01, -0.02]])
    rho = 0.5
    prog = build_admm_global_load(ctx, locals_pb, y, AdmmPenalty.uniform(rho))
    out = solve(prog)
    assert out.optimal

    cap = 30.0
    best = np.inf
    for g1 in np.linspace(0.0, cap, 3001):
        g2 = cap - g1
        d = np.hypot(g1 / cap - 0.6, g2 / cap - 0.4)
        obj = (
            -net.dr_price * (1 - d) * cap
            + y[0, 0] * (locals_pb[0, 0] - g1)
            + y[0, 1] * (locals_pb[0, 1] - g2)
            + 0.5 * rho * ((locals_pb[0, 0] - g1) ** 2 + (locals_pb[0, 1] - g2) ** 2)
        )
        best = min(best, obj)
    assert out.objective_value == pytest.approx(best, abs=1e-3)


# -------------------------------------------------------- rounding


def test_round_integral_solution_is_identity():
    ctx = two_vpp_context()
    sol = solve_coalition(ctx, (0,))
    sch = sol.schedules[0]
    sch.servers = np.round(sch.servers)  # force integral counts
    report = round_servers(sol)
    assert np.array_equal(report.rounded_servers[0], sch.servers.astype(int))
    assert report.objective_gap_bound == pytest.approx(0.0, abs=1e-9)


def test_round_preserves_capacity_and_bounds_gap():
    ctx = two_vpp_context()
    sol = solve_coalition(ctx, (0, 1))
    report = round_servers(sol)
    assert (report.rounded_servers >= report.continuous_servers - 1e-9).all()
    assert (report.rounded_servers - report.continuous_servers < 1.0).all()
    for k, i in enumerate(report.members):
        lam = ctx.workload_equivalent(i)
        outgoing = sol.migration.workload[:, i, :].sum(axis=1)
        fleet = ctx.profiles[i].fleet
        assert (
            report.rounded_servers[k] * fleet.service_rate >= lam - outgoing - 1e-6
        ).all()
    assert report.realized_gap <= report.objective_gap_bound + 1e-9
    assert report.realized_gap >= -1e-6


def test_enforce_bess_complementarity_cut_path():
    # lossless free-cycling battery: overlap is objective-neutral, so the
    # interior-point solution parks inside the optimal face with both
    # charging and discharging active; the cut re-solve removes it
    bess = make_bess(eff_ch=1.0, eff_dis=1.0, self_discharge=0.0, degr_cost=0.0)
    profile = make_profile(
        "deg", [900, 1100, 1400, 1600, 1300, 1000], [0, 5, 15, 18, 8, 0],
        [0.08, 0.09, 0.12, 0.15, 0.13, 0.10], 60.0, bess=bess,
    )
    net = make_network(1, 6)
    ctx = ProblemContext(network=net, profiles=(profile,))
    sol = solve_coalition(ctx, (0,))
    overlap = np.minimum(sol.schedules[0].charge, sol.schedules[0].discharge).max()
    assert overlap > 1e-6  # degenerate face actually hit
    fixed = enforce_bess_complementarity(sol)
    assert fixed is not sol
    cleaned = np.minimum(fixed.schedules[0].charge, fixed.schedules[0].discharge).max()
    assert cleaned <= 1e-6
    assert fixed.objective == pytest.approx(sol.objective, abs=1e-6)


def test_infeasible_batch_cap_surfaces_solver_status():
    from vppcoop.assemble import SolveFailedError
    from vppcoop.model import VppProfile

    base = two_vpp_context().profiles[0]
    bad = VppProfile(
        id=base.id,
        price_buy=base.price_buy,
        pv_unit_cost=base.pv_unit_cost,
        pv_fuzzy=base.pv_fuzzy,
        workload_fuzzy=base.workload_fuzzy,
        batch_energy_total=100.0,
        batch_slot_cap=1.0,  # 6 slots x 1 kWh < 100 kWh budget
        declared_capacity=base.declared_capacity,
        fleet=base.fleet,
        bess=base.bess,
    )
    ctx = ProblemContext(network=make_network(1, 6), profiles=(bad,))
    with pytest.raises(SolveFailedError, match="infeasible"):
        solve_coalition(ctx, (0,))
