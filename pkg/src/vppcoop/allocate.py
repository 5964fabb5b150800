"""Cooperative cost allocation: characteristic function and the two rules.

The linear-complexity rule redistributes the coalition's savings in
proportion to standalone costs and charges the operator a fraction
``gamma`` of the savings as a coordination fee; it consumes exactly
N + 1 characteristic evaluations.  The classical Shapley value is kept
as a small-N oracle (2^N - 1 evaluations) and intentionally differs
from the proportional rule on general games.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from math import factorial

import numpy as np

from .assemble import DEFAULT_SOLVER_TOL, ProblemContext, solve_coalition

STANDARD_SHAPLEY_MAX_PLAYERS = 8


class AllocationError(ValueError):
    pass


@dataclass
class AllocationReport:
    """Savings split between VPPs and the operator fee."""

    standalone_costs: tuple[float, ...]
    coalition_cost: float
    gamma: float
    total_savings: float
    vppo_fee: float
    allocations: tuple[float, ...]  # proportional-rule cost positions
    savings_components: tuple[float, ...]
    ratios: tuple[float, ...] | None  # None when there are no savings to share
    final_costs: tuple[float, ...]
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "standalone_costs": list(self.standalone_costs),
            "coalition_cost": self.coalition_cost,
            "gamma": self.gamma,
            "total_savings": self.total_savings,
            "vppo_fee": self.vppo_fee,
            "allocations": list(self.allocations),
            "savings_components": list(self.savings_components),
            "ratios": None if self.ratios is None else list(self.ratios),
            "final_costs": list(self.final_costs),
            "warnings": list(self.warnings),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def improved_allocation(standalone, coalition, gamma) -> AllocationReport:
    """Proportional savings redistribution with an operator fee.

    phi_i = c_i + (c_i / sum c) * (c(N) - sum c)
    theta_i = (c_i - phi_i) / V_save
    C*_i = c_i - theta_i * (1 - gamma) * V_save

    Exactly N + 1 cost inputs are consumed.  A zero standalone total or
    zero savings yields the degenerate report with costs unchanged.
    """
    if not 0.0 <= gamma < 1.0:
        raise AllocationError(f"gamma must lie in [0, 1), got {gamma}")
    standalone = tuple(float(c) for c in standalone)
    coalition = float(coalition)
    total_standalone = sum(standalone)
    savings = total_standalone - coalition

    warnings = []
    if any(c < 0 for c in standalone):
        warnings.append(
            "negative standalone cost: the proportional weight loses its interpretation"
        )

    if total_standalone == 0.0 or savings == 0.0:
        return AllocationReport(
            standalone_costs=standalone,
            coalition_cost=coalition,
            gamma=gamma,
            total_savings=savings,
            vppo_fee=gamma * savings,
            allocations=standalone,
            savings_components=tuple(0.0 for _ in standalone),
            ratios=None,
            final_costs=standalone,
            warnings=tuple(warnings + ["no savings to share"]),
        )

    # theta_i = (c_i - phi_i) / V_save simplifies to c_i / sum(c); the
    # simplified form avoids cancellation when the savings are tiny
    ratios = tuple(c / total_standalone for c in standalone)
    components = tuple(theta * savings for theta in ratios)
    allocations = tuple(c - v for c, v in zip(standalone, components))
    final = tuple(
        c - theta * (1.0 - gamma) * savings for c, theta in zip(standalone, ratios)
    )
    return AllocationReport(
        standalone_costs=standalone,
        coalition_cost=coalition,
        gamma=gamma,
        total_savings=savings,
        vppo_fee=gamma * savings,
        allocations=allocations,
        savings_components=components,
        ratios=ratios,
        final_costs=final,
        warnings=tuple(warnings),
    )


def standard_shapley(characteristic, n) -> list[float]:
    """Classical Shapley values from a full coalition-cost map.

    ``characteristic`` maps frozensets (or any iterable of player
    indices) to costs and must cover all nonempty coalitions of
    ``range(n)``; the empty coalition defaults to 0.  Restricted to
    n <= 8, oracle use only.
    """
    if n > STANDARD_SHAPLEY_MAX_PLAYERS:
        raise AllocationError(f"standard Shapley restricted to n <= {STANDARD_SHAPLEY_MAX_PLAYERS}")
    costs = {frozenset(k): float(v) for k, v in characteristic.items()}

    def cost(s):
        if not s:
            return costs.get(frozenset(), 0.0)
        key = frozenset(s)
        if key not in costs:
            raise AllocationError(f"characteristic missing coalition {sorted(key)}")
        return costs[key]

    players = range(n)
    values = []
    for i in players:
        others = [j for j in players if j != i]
        phi = 0.0
        for size in range(len(others) + 1):
            weight = factorial(size) * factorial(n - size - 1) / factorial(n)
            for coalition in combinations(others, size):
                phi += weight * (cost(coalition + (i,)) - cost(coalition))
        values.append(phi)
    return values


class CharacteristicOracle:
    """Coalition-cost evaluator backed by the centralized solver.

    Counts every evaluation; no caching, so the counters reflect the
    true complexity of the allocation procedure driving it.
    """

    def __init__(self, ctx: ProblemContext, tolerance=DEFAULT_SOLVER_TOL):
        self.ctx = ctx
        self.tolerance = tolerance
        self.calls = 0

    def cost(self, members) -> float:
        members = tuple(sorted(members))
        if not members:
            return 0.0
        self.calls += 1
        return solve_coalition(self.ctx, members, tolerance=self.tolerance).objective


def characteristic_cost(ctx: ProblemContext, members, tolerance=DEFAULT_SOLVER_TOL) -> float:
    """Minimum total cost of one coalition (singletons reduce to standalone)."""
    return CharacteristicOracle(ctx, tolerance).cost(members)


def allocate_from_oracle(oracle: CharacteristicOracle, gamma,
                         coalition_cost=None) -> AllocationReport:
    """Run the proportional rule off an oracle: N singleton solves plus
    the grand coalition (skipped when ``coalition_cost`` is supplied,
    e.g. from a distributed solve)."""
    n = oracle.ctx.network.n_vpps
    standalone = [oracle.cost((i,)) for i in range(n)]
    if coalition_cost is None:
        coalition_cost = oracle.cost(tuple(range(n)))
    return improved_allocation(standalone, coalition_cost, gamma)


def shapley_from_oracle(oracle: CharacteristicOracle, n=None) -> list[float]:
    """Evaluate every nonempty coalition (2^n - 1 solves), then average
    marginal contributions."""
    n = oracle.ctx.network.n_vpps if n is None else n
    players = range(n)
    costs = {}
    for size in range(1, n + 1):
        for coalition in combinations(players, size):
            costs[frozenset(coalition)] = oracle.cost(coalition)
    return standard_shapley(costs, n)


def verify_identities(report: AllocationReport, rel_tol=1e-9) -> None:
    """Raise unless the allocation satisfies its accounting identities.

    Efficiency of the proportional rule, unit ratio sum, budget balance
    including the operator fee, and individual rationality whenever the
    coalition actually saves against positive standalone costs.
    """
    scale = max(1.0, abs(report.coalition_cost))
    if abs(sum(report.allocations) - report.coalition_cost) > rel_tol * scale:
        raise AllocationError("allocations do not sum to the coalition cost")
    if report.ratios is not None:
        if abs(sum(report.ratios) - 1.0) > rel_tol:
            raise AllocationError("savings ratios do not sum to one")
        expected_total = report.coalition_cost + report.gamma * report.total_savings
        if abs(sum(report.final_costs) - expected_total) > rel_tol * scale:
            raise AllocationError("final costs break the budget balance")
    if (
        all(c > 0 for c in report.standalone_costs)
        and report.coalition_cost <= sum(report.standalone_costs)
    ):
        for final, alone in zip(report.final_costs, report.standalone_costs):
            if final > alone + rel_tol * scale:
                raise AllocationError("allocation violates individual rationality")


def format_cost_table(report: AllocationReport, ids=None) -> str:
    """Operating-cost comparison: standalone vs allocated, with totals."""
    n = len(report.standalone_costs)
    ids = ids or [f"VPP{i + 1}" for i in range(n)]
    width = max(12, max(len(s) for s in ids) + 2)
    header = "".join(s.rjust(width) for s in ids) + "SUM".rjust(width)
    lines = [
        "Mode of operation".ljust(24) + header,
        "Independent ($)".ljust(24)
        + "".join(f"{c:.1f}".rjust(width) for c in report.standalone_costs)
        + f"{sum(report.standalone_costs):.1f}".rjust(width),
        "Cooperative ($)".ljust(24)
        + "".join(f"{c:.1f}".rjust(width) for c in report.final_costs)
        + f"{sum(report.final_costs):.1f}".rjust(width),
    ]
    lines.append(
        f"Coalition cost: {report.coalition_cost:.1f}   savings: {report.total_savings:.1f}"
        f"   operator fee (gamma={report.gamma}): {report.vppo_fee:.1f}"
    )
    for w in report.warnings:
        lines.append(f"note: {w}")
    return "\n".join(lines)
