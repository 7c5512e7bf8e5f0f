"""Solver drivers: LP front end, Kelley cutting planes, branch and bound.

The cutting-plane driver outer-approximates convex constraints (cones
and nonlinear rows) with tangent rows added incrementally to one
SolverSession, re-optimized by dual simplex. Branch and bound handles
binary variables depth-first on top of either driver, sharing one
global pool of convex cuts across nodes.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Optional, Sequence

from . import ad
from .errors import SessionStateError
from .model import (
    EQ,
    GE,
    LE,
    MAX,
    MIN,
    Constraint,
    Model,
    StandardForm,
    canonicalize,
    to_standard_form,
)
from .simplex import FEAS_TOL, SolveResult, SolverSession

__all__ = [
    "SolveResult",
    "SolverSession",
    "CutGenerator",
    "lp_solve",
    "resolve_after_row_add",
    "cutting_plane_solve",
    "branch_and_bound",
    "check_feasible",
    "FEAS_TOL",
]

_DESK_CAP = 5000


class CutGenerator:
    """Tangent-cut oracle for one convex constraint c(x) <= 0.

    `evaluate(x)` returns the constraint value; `cut(x)` returns a
    valid LE row (pairs, rhs) supporting the feasible set at x. Cuts
    are valid globally only when the constraint really is convex; that
    assumption is the caller's, as with any outer approximation.
    """

    __slots__ = ("evaluate", "cut", "name")

    def __init__(self, evaluate: Callable, cut: Callable, name: str = "cut"):
        self.evaluate = evaluate
        self.cut = cut
        self.name = name

    @classmethod
    def from_cone(cls, con: Constraint, name: str = "cone") -> "CutGenerator":
        """Cuts for ||X(x)||_2 <= T(x) with affine X, T.

        The tangent at a point with X != 0 is u^T X(x) <= T(x) for the
        unit vector u along X; at X = 0 the cut degenerates to T >= 0.
        """
        t = canonicalize(con.cone_t)
        xs = [canonicalize(e) for e in con.cone_x]

        def evaluate(x):
            nv = math.sqrt(sum(e.evaluate(x) ** 2 for e in xs))
            return nv - t.evaluate(x)

        def cut(x):
            vals = [e.evaluate(x) for e in xs]
            nv = math.sqrt(sum(v * v for v in vals))
            coeffs: dict = {}
            rhs = t.constant
            for c, v in t.terms:
                coeffs[v.index] = coeffs.get(v.index, 0.0) - c
            if nv > 1e-12:
                for val, e in zip(vals, xs):
                    u = val / nv
                    rhs -= u * e.constant
                    for c, v in e.terms:
                        coeffs[v.index] = coeffs.get(v.index, 0.0) + u * c
            return sorted(coeffs.items()), rhs

        return cls(evaluate, cut, name)

    @classmethod
    def from_graph(
        cls,
        graph,
        sense: str,
        rhs: float,
        params: Sequence[float] = (),
        name: str = "nl",
    ) -> "CutGenerator":
        """Cuts for a nonlinear row: body <= rhs (or >= via negation)."""
        if sense == EQ:
            raise ValueError("equality rows cannot be outer-approximated by cuts")
        flip = -1.0 if sense == GE else 1.0

        def evaluate(x):
            from .nlexpr import eval_graph

            return flip * (eval_graph(graph, x, params) - rhs)

        def cut(x):
            from .nlexpr import eval_graph

            val = flip * (eval_graph(graph, x, params) - rhs)
            grad = ad.gradient(graph, x, params)
            pairs = [(j, flip * g) for j, g in enumerate(grad) if g != 0.0]
            cut_rhs = sum(c * x[j] for j, c in pairs) - val
            return pairs, cut_rhs

        return cls(evaluate, cut, name)


def _session_for(target, **kw) -> SolverSession:
    if isinstance(target, SolverSession):
        return target
    if isinstance(target, Model):
        target = to_standard_form(target)
    if not isinstance(target, StandardForm):
        raise TypeError(f"cannot solve a {type(target).__name__}")
    if target.num_vars + target.num_rows > _DESK_CAP:
        warnings.warn(
            f"instance has {target.num_vars} vars + {target.num_rows} rows; "
            f"the dense tableau is meant for n + m <= {_DESK_CAP}",
            RuntimeWarning,
            stacklevel=3,
        )
    return SolverSession(target, **kw)


def lp_solve(target, **session_kw) -> SolveResult:
    """Solve an LP (model, standard form, or existing session).

    Cone constraints present in the form are ignored here; use
    cutting_plane_solve for cone-aware solving.
    """
    return _session_for(target, **session_kw).solve()


def resolve_after_row_add(session: SolverSession, rows: Sequence) -> SolveResult:
    """Append (pairs, sense, rhs) rows, then dual-simplex re-optimize."""
    for pairs, sense, rhs in rows:
        session.add_row(pairs, sense, rhs)
    return session.resolve()


def _linear_part(model: Model) -> Model:
    """Shallow model view with cone and nonlinear rows removed."""
    lin = Model()
    lin.num_vars = model.num_vars
    lin.lb = list(model.lb)
    lin.ub = list(model.ub)
    lin.is_integer = list(model.is_integer)
    lin.constraints = [c for c in model.constraints if not c.is_cone]
    lin.objective = model.objective
    lin.objective_sense = model.objective_sense
    lin.params = model.params
    lin.functions = model.functions
    return lin


def default_generators(model: Model) -> list:
    """One generator per cone constraint and per nonlinear LE/GE row."""
    gens = []
    for i, con in enumerate(model.constraints):
        if con.is_cone:
            gens.append(CutGenerator.from_cone(con, name=f"cone{i}"))
    for i, (graph, sense, rhs) in enumerate(model.nl_constraints):
        gens.append(
            CutGenerator.from_graph(graph, sense, rhs, model.params, name=f"nl{i}")
        )
    return gens


def cutting_plane_solve(
    model: Model,
    generators: Optional[Sequence[CutGenerator]] = None,
    tol: float = 1e-6,
    iteration_cap: Optional[int] = None,
    jitter: float = 0.0,
    warm_start: bool = True,
    start: Optional[Sequence[float]] = None,
    cut_pool: Optional[list] = None,
    trace: bool = False,
    extra_row_capacity: Optional[int] = None,
) -> SolveResult:
    """Kelley outer approximation over the model's linear relaxation.

    Each iteration solves the current LP, asks every generator for its
    violation at the iterate, adds one tangent row per violated
    generator through the session (no rebuilds), and re-optimizes with
    dual simplex. Stops when no generator is violated beyond tol, or at
    the iteration cap (status iteration_limit; the incumbent relaxation
    point and objective are still reported).

    `start` seeds one cut per generator at a chosen point before the
    first solve (needed when the bare relaxation is unbounded).
    `warm_start=False` rebuilds a cold session per iteration instead,
    for pivot-count comparisons. `cut_pool` is a shared list of
    (pairs, rhs) rows: existing entries pre-seed the session and newly
    generated cuts are appended, which lets branch-and-bound reuse cuts
    across nodes.
    """
    if not warm_start and cut_pool is not None:
        raise ValueError("cold-start mode does not support a shared cut pool")
    if generators is None:
        generators = default_generators(model)
    if iteration_cap is None:
        iteration_cap = 10 * model.num_vars + 100
    if extra_row_capacity is None:
        extra_row_capacity = iteration_cap * max(1, len(generators)) + len(
            cut_pool or ()
        ) + len(generators) + 8
    form = to_standard_form(_linear_part(model))

    def fresh_session() -> SolverSession:
        s = SolverSession(form, extra_row_capacity=extra_row_capacity, jitter=jitter)
        if cut_pool:
            for pairs, rhs in cut_pool:
                s.add_row(pairs, LE, rhs)
        return s

    session = fresh_session()
    seeded: list = []
    if start is not None:
        for gen in generators:
            pairs, rhs = gen.cut(start)
            session.add_row(pairs, LE, rhs)
            seeded.append((pairs, rhs))
            if cut_pool is not None:
                cut_pool.append((pairs, rhs))
    res = session.solve()
    pivots = res.pivots
    cuts_added = len(seeded)
    iterations = 0
    history: list = []
    status = res.status
    while status == "optimal":
        x = session.current_point()
        violated = [g for g in generators if g.evaluate(x) > tol]
        history.append((iterations, session.form.objective_value(x), cuts_added))
        if not violated:
            break
        if iterations >= iteration_cap:
            status = "iteration_limit"
            break
        new_rows = []
        for gen in violated:
            pairs, rhs = gen.cut(x)
            new_rows.append((pairs, LE, rhs))
            if cut_pool is not None:
                cut_pool.append((pairs, rhs))
        cuts_added += len(new_rows)
        if warm_start:
            res = resolve_after_row_add(session, new_rows)
        else:
            seeded.extend((pairs, rhs) for pairs, _, rhs in new_rows)
            session = fresh_session()
            for pairs, rhs in seeded:
                session.add_row(pairs, LE, rhs)
            res = session.solve()
        pivots += res.pivots
        status = res.status
        iterations += 1

    if status != "optimal" and status != "iteration_limit":
        return SolveResult(status, None, None, pivots, cuts_added,
                           trace=history if trace else None)
    x = session.current_point()
    return SolveResult(
        status,
        session.form.objective_value(x),
        x,
        pivots,
        cuts_added,
        trace=history if trace else None,
    )


def check_feasible(model: Model, x: Sequence[float], tol: float = FEAS_TOL) -> tuple:
    """(feasible, max violation) for bounds, rows, and cones at x."""
    worst = 0.0
    for j in range(model.num_vars):
        worst = max(worst, model.lb[j] - x[j], x[j] - model.ub[j])
    for con in model.constraints:
        if con.is_cone:
            nv = math.sqrt(sum(e.evaluate(x) ** 2 for e in con.cone_x))
            worst = max(worst, nv - con.cone_t.evaluate(x))
        else:
            val = con.body.evaluate(x)
            if con.sense == LE:
                worst = max(worst, val - con.rhs)
            elif con.sense == GE:
                worst = max(worst, con.rhs - val)
            else:
                worst = max(worst, abs(val - con.rhs))
    return worst <= tol, worst


def branch_and_bound(
    model: Model,
    tol: float = 1e-6,
    node_cap: int = 100_000,
    cut_tol: float = 1e-6,
    jitter: float = 0.0,
) -> SolveResult:
    """Depth-first branch and bound over binary variables.

    Relaxations solve through cutting planes when the model has cones
    or nonlinear rows, plain LP otherwise; convex cuts found at any
    node are pooled and reused by every later node. Branches on the
    most fractional binary (lowest index on ties), exploring the fix=1
    child first.
    """
    binaries = [j for j, f in enumerate(model.is_integer) if f]
    for j in binaries:
        if model.lb[j] < -1e-9 or model.ub[j] > 1.0 + 1e-9:
            raise ValueError(
                f"branch_and_bound handles binary variables only; variable {j} "
                f"has bounds [{model.lb[j]}, {model.ub[j]}]"
            )
    needs_cuts = bool(model.nl_constraints) or any(
        c.is_cone for c in model.constraints
    )
    cut_pool: list = []
    sense = model.objective_sense

    def solve_node(fix: dict) -> SolveResult:
        node = _linear_part(model)
        node.constraints = list(model.constraints)  # cones included for generators
        node.nl_constraints = list(model.nl_constraints)
        for j, v in fix.items():
            node.lb[j] = float(v)
            node.ub[j] = float(v)
        if needs_cuts:
            return cutting_plane_solve(
                node, tol=cut_tol, cut_pool=cut_pool, jitter=jitter
            )
        return lp_solve(to_standard_form(node))

    best_val = math.inf  # min-sense incumbent value
    best_x: Optional[list] = None
    total_pivots = 0
    total_cuts = 0
    solved = 0
    stack: list = [dict()]
    status = "optimal"
    while stack:
        if solved >= node_cap:
            status = "iteration_limit"
            break
        fix = stack.pop()
        res = solve_node(fix)
        solved += 1
        total_pivots += res.pivots
        total_cuts += res.cuts
        if res.status == "iteration_limit":
            status = "iteration_limit"
            break
        if res.status != "optimal":
            continue
        val = res.objective if sense == MIN else -res.objective
        if val >= best_val - 1e-9:
            continue
        frac_j, frac = -1, 0.0
        for j in binaries:
            if j in fix:
                continue
            f = res.x[j] - math.floor(res.x[j])
            dist = min(f, 1.0 - f)
            if dist > frac + 1e-12:
                frac, frac_j = dist, j
        if frac_j < 0 or frac <= tol:
            best_val = val
            best_x = res.x
            continue
        child0 = dict(fix)
        child0[frac_j] = 0
        child1 = dict(fix)
        child1[frac_j] = 1
        stack.append(child0)
        stack.append(child1)

    nodes = max(0, solved - 1)
    if best_x is None:
        final = "infeasible" if status == "optimal" else status
        return SolveResult(final, None, None, total_pivots, total_cuts, nodes)
    objective = best_val if sense == MIN else -best_val
    return SolveResult(status, objective, best_x, total_pivots, total_cuts, nodes)
