import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vppcoop.allocate import (
    AllocationError,
    CharacteristicOracle,
    allocate_from_oracle,
    characteristic_cost,
    format_cost_table,
    improved_allocation,
    shapley_from_oracle,
    standard_shapley,
)
from vppcoop.assemble import solve_coalition

from conftest import two_vpp_context


# ---------------------------------------------------------- improved rule


def test_hand_example_gamma_zero():
    rep = improved_allocation([10.0, 20.0], 24.0, 0.0)
    assert rep.allocations == pytest.approx((8.0, 16.0))
    assert rep.total_savings == pytest.approx(6.0)
    assert rep.ratios == pytest.approx((1 / 3, 2 / 3))
    assert rep.final_costs == pytest.approx((8.0, 16.0))
    assert rep.vppo_fee == 0.0


def test_no_cooperation_gain():
    rep = improved_allocation([10.0, 20.0], 30.0, 0.3)
    assert rep.total_savings == 0.0
    assert rep.ratios is None
    assert rep.final_costs == pytest.approx((10.0, 20.0))


def test_hand_example_gamma_half():
    rep = improved_allocation([10.0, 20.0], 24.0, 0.5)
    assert rep.final_costs == pytest.approx((9.0, 18.0))
    assert rep.vppo_fee == pytest.approx(3.0)
    assert sum(rep.final_costs) == pytest.approx(24.0 + 3.0)


def test_gamma_range_rejected():
    with pytest.raises(AllocationError):
        improved_allocation([1.0], 1.0, 1.0)
    with pytest.raises(AllocationError):
        improved_allocation([1.0], 1.0, -0.1)


def test_negative_standalone_flagged():
    rep = improved_allocation([-5.0, 20.0], 10.0, 0.1)
    assert any("negative" in w for w in rep.warnings)


@given(
    st.lists(st.floats(1.0, 500.0), min_size=2, max_size=6),
    st.floats(0.0, 0.95),
    st.floats(0.0, 0.99),
)
@settings(max_examples=150, deadline=None)
def test_allocation_identities(standalone, saving_frac, gamma):
    coalition = sum(standalone) * (1.0 - saving_frac)
    rep = improved_allocation(standalone, coalition, gamma)
    # efficiency of the proportional rule
    assert sum(rep.allocations) == pytest.approx(coalition, rel=1e-9)
    if rep.ratios is not None:
        assert sum(rep.ratios) == pytest.approx(1.0, rel=1e-9)
        assert sum(rep.final_costs) == pytest.approx(
            coalition + gamma * rep.total_savings, rel=1e-9
        )
        # individual rationality under positive costs and real savings
        if rep.total_savings >= 0:
            for final, alone in zip(rep.final_costs, rep.standalone_costs):
                assert final <= alone + 1e-9


@given(
    st.lists(st.floats(1.0, 500.0), min_size=2, max_size=5),
    st.floats(0.1, 10.0),
    st.floats(0.0, 0.9),
)
@settings(max_examples=80, deadline=None)
def test_positive_scaling_covariance(standalone, alpha, gamma):
    coalition = 0.9 * sum(standalone)
    base = improved_allocation(standalone, coalition, gamma)
    scaled = improved_allocation([alpha * c for c in standalone], alpha * coalition, gamma)
    assert scaled.ratios == pytest.approx(base.ratios, rel=1e-9)
    assert scaled.final_costs == pytest.approx(
        tuple(alpha * c for c in base.final_costs), rel=1e-9
    )
    assert scaled.total_savings == pytest.approx(alpha * base.total_savings, rel=1e-9)


# ---------------------------------------------------------- standard Shapley


def test_shapley_two_player_example():
    costs = {frozenset({0}): 10.0, frozenset({1}): 20.0, frozenset({0, 1}): 24.0}
    assert standard_shapley(costs, 2) == pytest.approx([7.0, 17.0])


def test_shapley_additive_game():
    singles = {0: 4.0, 1: 7.0, 2: 1.5}
    costs = {}
    for size in range(1, 4):
        from itertools import combinations

        for s in combinations(range(3), size):
            costs[frozenset(s)] = sum(singles[i] for i in s)
    assert standard_shapley(costs, 3) == pytest.approx([4.0, 7.0, 1.5])


def test_shapley_symmetric_game():
    costs = {
        frozenset({0}): 10.0,
        frozenset({1}): 10.0,
        frozenset({0, 1}): 16.0,
    }
    assert standard_shapley(costs, 2) == pytest.approx([8.0, 8.0])


def test_shapley_rejects_large_n():
    with pytest.raises(AllocationError):
        standard_shapley({}, 9)


def test_shapley_missing_coalition():
    with pytest.raises(AllocationError, match="missing"):
        standard_shapley({frozenset({0}): 1.0}, 2)


def test_rules_intentionally_differ():
    # same two-player game: proportional rule (8, 16) vs Shapley (7, 17)
    rep = improved_allocation([10.0, 20.0], 24.0, 0.0)
    shap = standard_shapley(
        {frozenset({0}): 10.0, frozenset({1}): 20.0, frozenset({0, 1}): 24.0}, 2
    )
    assert rep.allocations != pytest.approx(shap)
    assert sum(rep.allocations) == pytest.approx(sum(shap))  # both efficient


# ---------------------------------------------------------- characteristic


def test_characteristic_singleton_equals_independent():
    ctx = two_vpp_context()
    assert characteristic_cost(ctx, (0,)) == pytest.approx(
        solve_coalition(ctx, (0,)).objective, abs=1e-8
    )


def test_characteristic_subadditive_pair():
    ctx = two_vpp_context()
    c1 = characteristic_cost(ctx, (0,))
    c2 = characteristic_cost(ctx, (1,))
    c12 = characteristic_cost(ctx, (0, 1))
    assert c12 <= c1 + c2 + 1e-9


def test_oracle_call_counters():
    ctx = two_vpp_context()
    oracle = CharacteristicOracle(ctx)
    allocate_from_oracle(oracle, gamma=0.1)
    assert oracle.calls == ctx.network.n_vpps + 1

    oracle2 = CharacteristicOracle(ctx)
    shapley_from_oracle(oracle2)
    assert oracle2.calls == 2 ** ctx.network.n_vpps - 1


def test_allocation_from_solver_satisfies_identities():
    ctx = two_vpp_context()
    oracle = CharacteristicOracle(ctx)
    rep = allocate_from_oracle(oracle, gamma=0.1)
    assert rep.total_savings >= -1e-9
    assert sum(rep.allocations) == pytest.approx(rep.coalition_cost, rel=1e-9)
    assert sum(rep.final_costs) == pytest.approx(
        rep.coalition_cost + rep.gamma * rep.total_savings, rel=1e-9
    )


def test_format_cost_table_structure():
    rep = improved_allocation([10.0, 20.0], 24.0, 0.5)
    table = format_cost_table(rep)
    assert "Independent" in table and "Cooperative" in table
    assert "SUM" in table
    assert "30.0" in table and "27.0" in table
