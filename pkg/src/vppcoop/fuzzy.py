"""Triangular/trapezoidal fuzzy variables and credibility chance constraints.

A fuzzy quantity is described by its membership function; the credibility
of an event is the average of its possibility and necessity.  A chance
constraint ``Cr{ sum_k h_k * zeta_k + h_0 <= 0 } >= beta`` over trapezoidal
fuzzy variables admits an exact deterministic rewrite when ``beta >= 1/2``,
which this module provides in closed form.

All operations are pure functions over immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TOL = 1e-9


class FuzzyError(ValueError):
    pass


@dataclass(frozen=True)
class FuzzyTriple:
    """Triangular fuzzy number with support [a, c] and modal value b."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (self.a <= self.b <= self.c):
            raise FuzzyError(f"triangle requires a <= b <= c, got ({self.a}, {self.b}, {self.c})")

    def as_trapezoid(self) -> "TrapezoidParams":
        return TrapezoidParams(self.a, self.b, self.b, self.c)

    def is_crisp(self) -> bool:
        return self.a == self.c


@dataclass(frozen=True)
class TrapezoidParams:
    """Trapezoidal membership parameters r1 <= r2 <= r3 <= r4."""

    r1: float
    r2: float
    r3: float
    r4: float

    def __post_init__(self):
        if not (self.r1 <= self.r2 <= self.r3 <= self.r4):
            raise FuzzyError(
                f"trapezoid requires r1 <= r2 <= r3 <= r4, got "
                f"({self.r1}, {self.r2}, {self.r3}, {self.r4})"
            )


@dataclass(frozen=True)
class LinearFuzzyConstraint:
    """``sum_k h_k * zeta_k + offset <= 0`` held at credibility >= confidence.

    ``coefficients`` pairs each crisp coefficient h_k with its triangular
    fuzzy variable.  The confidence must be at least 1/2 for the closed-form
    deterministic equivalent to apply.
    """

    coefficients: tuple[tuple[float, FuzzyTriple], ...]
    offset: float
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(self.coefficients))
        if not 0.5 <= self.confidence <= 1.0:
            raise FuzzyError(f"confidence must lie in [0.5, 1], got {self.confidence}")


def membership(params: TrapezoidParams, x) -> float:
    """Piecewise-linear membership value in [0, 1].

    Degenerate branches (r1 == r2 or r3 == r4) take the limit value 1 at
    the shared point.
    """
    r1, r2, r3, r4 = params.r1, params.r2, params.r3, params.r4
    if r2 <= x <= r3:
        return 1.0
    if r1 <= x < r2:
        return (x - r1) / (r2 - r1)
    if r3 < x <= r4:
        return (x - r4) / (r3 - r4)
    return 0.0


def credibility_leq(params: TrapezoidParams, r) -> float:
    """Credibility that the fuzzy variable is <= r, exactly.

    Monotone nondecreasing in r: 0 below the support, 1/2 across the
    plateau, 1 above the support.
    """
    r1, r2, r3, r4 = params.r1, params.r2, params.r3, params.r4
    if r >= r4:
        return 1.0
    if r > r3:
        return 0.5 * (1.0 + (r - r3) / (r4 - r3))
    if r >= r2:
        return 0.5
    if r > r1:
        return 0.5 * (r - r1) / (r2 - r1)
    return 0.0


def linear_combination(terms, offset=0.0) -> FuzzyTriple:
    """Exact fuzzy distribution of ``sum_k h_k * zeta_k + offset``.

    Positive coefficients scale the triple, negative coefficients scale
    and reflect it; independence across terms is assumed.
    """
    terms = list(terms)
    if not terms:
        raise FuzzyError("linear_combination needs at least one term")
    lo = hi = mid = float(offset)
    for h, t in terms:
        mid += h * t.b
        if h >= 0:
            lo += h * t.a
            hi += h * t.c
        else:
            lo += h * t.c
            hi += h * t.a
    return FuzzyTriple(lo, mid, hi)


def pessimistic_value(triple: FuzzyTriple, beta) -> float:
    """beta-pessimistic equivalent (2-2*beta)*b + (2*beta-1)*c.

    The smallest crisp threshold that the fuzzy quantity stays below with
    credibility beta; used where the quantity adds load to a constraint.
    """
    return (2.0 - 2.0 * beta) * triple.b + (2.0 * beta - 1.0) * triple.c


def optimistic_value(triple: FuzzyTriple, beta) -> float:
    """beta-optimistic equivalent (2-2*beta)*b + (2*beta-1)*a.

    The guaranteed-available counterpart, used where the quantity relieves
    a constraint (e.g. renewable supply).
    """
    return (2.0 - 2.0 * beta) * triple.b + (2.0 * beta - 1.0) * triple.a


def crisp_equivalent(constraint: LinearFuzzyConstraint) -> float:
    """Deterministic left-hand side of the chance constraint.

    Returns L such that ``Cr{...} >= beta`` holds iff ``L <= 0``:

        L = h_0 + (2-2b)*sum(r3*h+ - r2*h-) + (2b-1)*sum(r4*h+ - r1*h-)

    with h+ = max(h, 0), h- = max(-h, 0) and triangles widened to
    trapezoids (r2 = r3 = modal value).  Requires beta >= 1/2.
    """
    beta = constraint.confidence
    lhs = constraint.offset
    lo = 2.0 - 2.0 * beta
    hi = 2.0 * beta - 1.0
    for h, t in constraint.coefficients:
        hp = max(h, 0.0)
        hm = max(-h, 0.0)
        lhs += lo * (t.b * hp - t.b * hm) + hi * (t.c * hp - t.a * hm)
    return lhs


def crisp_satisfied(constraint: LinearFuzzyConstraint, tol=TOL) -> bool:
    return crisp_equivalent(constraint) <= tol


def combined_credibility(constraint: LinearFuzzyConstraint) -> float:
    """Credibility that the fuzzy affine form is <= 0 (oracle for tests)."""
    combined = linear_combination(constraint.coefficients, constraint.offset)
    return credibility_leq(combined.as_trapezoid(), 0.0)


def expected_value(triple: FuzzyTriple) -> float:
    """Credibilistic expected value (a + 2b + c) / 4."""
    return 0.25 * (triple.a + 2.0 * triple.b + triple.c)
