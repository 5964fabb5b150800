"""Solver-agnostic second-order cone program representation and solve adapter.

The intermediate representation is deliberately close to conic standard
form: named scalar variables with box bounds, a linear objective, linear
equalities/inequalities, and second-order cone constraints
``||A x + b||_2 <= c^T x + d``.  Programs are immutable once handed to
:func:`solve`; the adapter lowers them to Clarabel (an interior-point
conic solver) without any intermediate modeling layer.

Integer variables carry only a continuity tag.  The lowering always
relaxes them; rounding is the caller's responsibility.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

INF = math.inf

#: statuses surfaced by :func:`solve`
STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_ITERATION_LIMIT = "iteration-limit"

DEFAULT_TOLERANCE = 1e-8


class ProgramError(ValueError):
    """Malformed program (unknown variable, empty cone, duplicate name)."""


@dataclass
class SolveOutcome:
    """Result of one conic solve.

    ``primal`` is present iff ``status == "optimal"``; it is indexed like
    the program's variables.  ``objective_value`` includes the program's
    objective constant.
    """

    status: str
    primal: np.ndarray | None
    objective_value: float | None
    iterations: int
    runtime: float
    raw_status: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


class ConicProgram:
    """Mutable builder for a minimization SOCP, immutable once solved.

    Linear expressions are plain ``{var_index: coefficient}`` dicts; rows
    keep insertion order so construction is deterministic.
    """

    def __init__(self, name="program"):
        self.name = name
        self.var_names: list[str] = []
        self._index: dict[str, int] = {}
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.integer: list[bool] = []
        self.obj: dict[int, float] = {}
        self.obj_const: float = 0.0
        self.eqs: list[tuple[dict[int, float], float]] = []
        self.les: list[tuple[dict[int, float], float]] = []
        # each cone: (head_coeffs, head_const, [(row_coeffs, row_const), ...])
        self.socs: list[tuple[dict[int, float], float, list[tuple[dict[int, float], float]]]] = []
        self.meta: dict = {}

    # -- construction -------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    def add_var(self, name, lb=0.0, ub=None, integer=False) -> int:
        if name in self._index:
            raise ProgramError(f"duplicate variable name {name!r}")
        idx = len(self.var_names)
        self.var_names.append(name)
        self._index[name] = idx
        self.lb.append(-INF if lb is None else float(lb))
        self.ub.append(INF if ub is None else float(ub))
        self.integer.append(bool(integer))
        return idx

    def var(self, name) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ProgramError(f"unknown variable {name!r}") from None

    def has_var(self, name) -> bool:
        return name in self._index

    def add_objective(self, coeffs, const=0.0):
        for idx, c in coeffs.items():
            self._check(idx)
            self.obj[idx] = self.obj.get(idx, 0.0) + float(c)
        self.obj_const += float(const)

    def add_eq(self, coeffs, rhs):
        self._check_row(coeffs)
        self.eqs.append((dict(coeffs), float(rhs)))

    def add_le(self, coeffs, rhs):
        """sum(coeffs * x) <= rhs"""
        self._check_row(coeffs)
        self.les.append((dict(coeffs), float(rhs)))

    def add_soc(self, head, tail):
        """||tail||_2 <= head, each side an affine (coeffs, const) pair."""
        if not tail:
            raise ProgramError("second-order cone needs at least one tail row")
        hc, hk = head
        self._check_row(hc)
        rows = []
        for rc, rk in tail:
            self._check_row(rc)
            rows.append((dict(rc), float(rk)))
        self.socs.append((dict(hc), float(hk), rows))

    def _check(self, idx):
        if not 0 <= idx < len(self.var_names):
            raise ProgramError(f"variable index {idx} out of range")

    def _check_row(self, coeffs):
        for idx in coeffs:
            self._check(idx)

    # -- evaluation ---------------------------------------------------

    def objective_at(self, x) -> float:
        return sum(c * x[i] for i, c in self.obj.items()) + self.obj_const

    # -- serialization ------------------------------------------------

    def to_dict(self) -> dict:
        def rows(items):
            return [[sorted(c.items()), k] for c, k in items]

        return {
            "name": self.name,
            "vars": [
                {
                    "name": n,
                    "lb": None if self.lb[i] == -INF else self.lb[i],
                    "ub": None if self.ub[i] == INF else self.ub[i],
                    "integer": self.integer[i],
                }
                for i, n in enumerate(self.var_names)
            ],
            "objective": {"coeffs": sorted(self.obj.items()), "const": self.obj_const},
            "eq": rows(self.eqs),
            "le": rows(self.les),
            "soc": [
                [sorted(hc.items()), hk, rows(tail)]
                for hc, hk, tail in self.socs
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data) -> "ConicProgram":
        prog = cls(data.get("name", "program"))
        for v in data["vars"]:
            prog.add_var(v["name"], lb=v["lb"], ub=v["ub"], integer=v["integer"])
        obj = data["objective"]
        prog.add_objective({int(i): c for i, c in obj["coeffs"]}, obj["const"])
        for coeffs, rhs in data["eq"]:
            prog.add_eq({int(i): c for i, c in coeffs}, rhs)
        for coeffs, rhs in data["le"]:
            prog.add_le({int(i): c for i, c in coeffs}, rhs)
        for hc, hk, tail in data["soc"]:
            prog.add_soc(
                ({int(i): c for i, c in hc}, hk),
                [({int(i): c for i, c in rc}, rk) for rc, rk in tail],
            )
        prog.meta = data.get("meta", {})
        return prog

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text) -> "ConicProgram":
        return cls.from_dict(json.loads(text))

    def dump_text(self) -> str:
        """One constraint per line, canonical ordering, for diffing."""

        def term(c, i):
            return f"{c!r}*{self.var_names[i]}"

        def expr(coeffs, const):
            parts = [term(c, i) for i, c in sorted(coeffs.items())]
            if const or not parts:
                parts.append(repr(const))
            return " + ".join(parts)

        lines = [f"program {self.name}"]
        for i, n in enumerate(self.var_names):
            tag = " int" if self.integer[i] else ""
            lines.append(f"var {n} in [{self.lb[i]!r}, {self.ub[i]!r}]{tag}")
        lines.append(f"min {expr(self.obj, self.obj_const)}")
        for coeffs, rhs in self.eqs:
            lines.append(f"eq {expr(coeffs, 0.0)} = {rhs!r}")
        for coeffs, rhs in self.les:
            lines.append(f"le {expr(coeffs, 0.0)} <= {rhs!r}")
        for hc, hk, tail in self.socs:
            rows = "; ".join(expr(rc, rk) for rc, rk in tail)
            lines.append(f"soc ||[{rows}]|| <= {expr(hc, hk)}")
        return "\n".join(lines) + "\n"


def _lower(program: ConicProgram):
    """Lower the IR to Clarabel's A x + s = b, s in K form."""
    import clarabel

    n = program.num_vars
    rows_i: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    b: list[float] = []
    cones = []
    m = 0

    def emit(coeffs, rhs):
        nonlocal m
        for idx, c in coeffs.items():
            rows_i.append(m)
            cols.append(idx)
            vals.append(c)
        b.append(rhs)
        m += 1

    # zero cone: equalities  (A x = b)
    if program.eqs:
        for coeffs, rhs in program.eqs:
            emit(coeffs, rhs)
        cones.append(clarabel.ZeroConeT(len(program.eqs)))

    # nonnegative cone: inequalities and finite bounds  (s = b - A x >= 0)
    nn = 0
    for coeffs, rhs in program.les:
        emit(coeffs, rhs)
        nn += 1
    for idx in range(n):
        if program.lb[idx] != -INF:
            emit({idx: -1.0}, -program.lb[idx])
            nn += 1
        if program.ub[idx] != INF:
            emit({idx: 1.0}, program.ub[idx])
            nn += 1
    if nn:
        cones.append(clarabel.NonnegativeConeT(nn))

    # second-order cones: s = (head; tail) with head >= ||tail||
    for hc, hk, tail in program.socs:
        emit({i: -c for i, c in hc.items()}, hk)
        for rc, rk in tail:
            emit({i: -c for i, c in rc.items()}, rk)
        cones.append(clarabel.SecondOrderConeT(1 + len(tail)))

    A = sparse.coo_matrix((vals, (rows_i, cols)), shape=(m, n)).tocsc()
    q = np.zeros(n)
    for idx, c in program.obj.items():
        q[idx] += c
    return A, np.asarray(b), q, cones


def solve(program: ConicProgram, tolerance=DEFAULT_TOLERANCE, max_iters=200000) -> SolveOutcome:
    """Solve the program with Clarabel.

    Deterministic given identical inputs and settings (single-threaded
    factorization).  Infeasible and unbounded outcomes are reported in
    the status, never raised.
    """
    import clarabel

    A, b, q, cones = _lower(program)
    P = sparse.csc_matrix((program.num_vars, program.num_vars))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_threads = 1
    settings.tol_gap_abs = tolerance
    settings.tol_gap_rel = tolerance
    settings.tol_feas = tolerance
    settings.max_iter = min(max_iters, 200000)

    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    result = solver.solve()
    runtime = time.perf_counter() - t0

    raw = str(result.status)
    if raw in ("Solved", "AlmostSolved"):
        status = STATUS_OPTIMAL
    elif raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = STATUS_INFEASIBLE
    elif raw in ("DualInfeasible", "AlmostDualInfeasible"):
        status = STATUS_UNBOUNDED
    else:
        status = STATUS_ITERATION_LIMIT

    if status == STATUS_OPTIMAL:
        x = np.asarray(result.x, dtype=float)
        return SolveOutcome(status, x, program.objective_at(x), result.iterations, runtime, raw)
    return SolveOutcome(status, None, None, result.iterations, runtime, raw)


def check_feasibility(program: ConicProgram, assignment) -> float:
    """Largest constraint violation of ``assignment`` (0 if feasible).

    Accepts an array indexed like the program's variables or a
    ``{name: value}`` mapping covering all of them.
    """
    if isinstance(assignment, dict):
        x = np.empty(program.num_vars)
        for name, idx in program._index.items():
            x[idx] = assignment[name]
    else:
        x = np.asarray(assignment, dtype=float)
        if x.shape != (program.num_vars,):
            raise ProgramError("assignment does not cover all variables")

    def val(coeffs, const=0.0):
        return sum(c * x[i] for i, c in coeffs.items()) + const

    worst = 0.0
    for idx in range(program.num_vars):
        if program.lb[idx] != -INF:
            worst = max(worst, program.lb[idx] - x[idx])
        if program.ub[idx] != INF:
            worst = max(worst, x[idx] - program.ub[idx])
    for coeffs, rhs in program.eqs:
        worst = max(worst, abs(val(coeffs) - rhs))
    for coeffs, rhs in program.les:
        worst = max(worst, val(coeffs) - rhs)
    for hc, hk, tail in program.socs:
        norm = math.sqrt(sum(val(rc, rk) ** 2 for rc, rk in tail))
        worst = max(worst, norm - val(hc, hk))
    return worst
