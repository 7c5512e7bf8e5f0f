"""Benchmark model builders and the timing harness.

Five families: a five-node min-cost flow example, a linear-quadratic
control problem on an (m+1)x(n+1) grid, a min-max facility location
MISOCP on a unit-square customer grid, a nonlinear beam control
problem, and a dense quadratic expression used as the build-complexity
probe. Builders are pure functions of their parameter structs so tests
can compare every model against independently coded formulas.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import nlexpr
from .ad import NlpEvaluator
from .model import (
    AffExpr,
    Constraint,
    Model,
    QuadExpr,
    expr_sum,
    to_standard_form,
)

__all__ = [
    "MinCostFlowData",
    "LqcpParams",
    "FacParams",
    "ClnlbeamParams",
    "DEFAULT_FLOW_DATA",
    "build_mincostflow",
    "build_lqcp",
    "build_fac",
    "build_clnlbeam",
    "build_quadexample",
    "build_l2ball",
    "timing_harness",
    "BenchRow",
    "FAMILIES",
]


@dataclass(frozen=True)
class MinCostFlowData:
    """Directed network: edges (from, to, cost, capacity), nodes 1..n.

    Node 1 is the source and node n the sink.
    """

    edges: tuple
    n: int

    def __post_init__(self):
        for u, v, _, cap in self.edges:
            if not (1 <= u <= self.n and 1 <= v <= self.n):
                raise ValueError(f"edge ({u}, {v}) references a node outside 1..{self.n}")
            if cap < 0:
                raise ValueError(f"edge ({u}, {v}) has negative capacity {cap}")


DEFAULT_FLOW_DATA = MinCostFlowData(
    edges=(
        (1, 2, 1.0, 0.5),
        (1, 3, 2.0, 0.4),
        (1, 4, 3.0, 0.6),
        (2, 5, 2.0, 0.3),
        (3, 5, 2.0, 0.6),
        (4, 5, 2.0, 0.5),
    ),
    n=5,
)


def build_mincostflow(data: MinCostFlowData = DEFAULT_FLOW_DATA) -> Model:
    """One variable per edge in [0, capacity]; unit inflow at the sink,
    conservation at every interior node; minimize total edge cost."""
    m = Model()
    xs = [m.add_variable(0.0, cap) for (_, _, _, cap) in data.edges]
    sink_terms = [
        (1.0, xs[e]) for e, (_, v, _, _) in enumerate(data.edges) if v == data.n
    ]
    m.add_constraint(Constraint.scalar(AffExpr(sink_terms), "EQ", 1.0))
    for node in range(2, data.n):
        terms = [
            (1.0, xs[e]) for e, (_, v, _, _) in enumerate(data.edges) if v == node
        ]
        terms += [
            (-1.0, xs[e]) for e, (u, _, _, _) in enumerate(data.edges) if u == node
        ]
        m.add_constraint(Constraint.scalar(AffExpr(terms), "EQ", 0.0))
    m.set_objective(
        "min", AffExpr([(float(c), xs[e]) for e, (_, _, c, _) in enumerate(data.edges)])
    )
    return m


def _default_target(n: int, dx: float) -> tuple:
    return tuple(0.5 * (1.0 - (j * dx) ** 2) for j in range(n + 1))


@dataclass(frozen=True)
class LqcpParams:
    """Grid sizes plus discretization constants (all overridable)."""

    m: int
    n: int
    a: float = 1e-3
    dx: Optional[float] = None
    dt: Optional[float] = None
    h2: Optional[float] = None
    yt: Optional[tuple] = None

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise ValueError(f"grid sizes must be >= 2, got m={self.m}, n={self.n}")

    def resolved(self) -> tuple:
        dx = self.dx if self.dx is not None else 1.0 / self.n
        dt = self.dt if self.dt is not None else 1.0 / self.m
        h2 = self.h2 if self.h2 is not None else dx * dx
        yt = self.yt if self.yt is not None else _default_target(self.n, dx)
        if len(yt) != self.n + 1:
            raise ValueError(f"target profile needs {self.n + 1} entries, got {len(yt)}")
        return dx, dt, h2, yt


def build_lqcp(params: LqcpParams) -> Model:
    """Least-squares terminal tracking with a regularized boundary control.

    Variables: y[i][j] on the (m+1)x(n+1) grid then u[0..m]. Rows: the
    interior difference scheme for i in 0..m-1, j in 1..n-1; zero
    initial profile; a one-sided second-order condition at j=0; the
    controlled flux condition at j=n.
    """
    P = params
    dx, dt, h2, yt = P.resolved()
    m = Model()
    y = [[m.add_variable(0.0, 1.0) for _ in range(P.n + 1)] for _ in range(P.m + 1)]
    u = [m.add_variable(-1.0, 1.0) for _ in range(P.m + 1)]

    def objective_terms():
        w = 0.25 * dx
        for j in range(P.n + 1):
            wj = w if j in (0, P.n) else 2.0 * w
            yv = y[P.m][j]
            yield (wj, yv, yv)
            yield (-2.0 * wj * yt[j], yv)
            yield wj * yt[j] ** 2
        wu = 0.25 * P.a * dt
        for i in range(1, P.m + 1):
            wi = wu if i == P.m else 2.0 * wu
            yield (wi, u[i], u[i])

    m.set_objective("min", expr_sum(objective_terms(), size_hint=3 * (P.n + 1) + P.m))

    c1 = 1.0 / dt
    c2 = 1.0 / (2.0 * h2)
    for i in range(P.m):
        for j in range(1, P.n):
            terms = [
                (c1, y[i + 1][j]),
                (-c1, y[i][j]),
                (-c2, y[i][j - 1]),
                (2.0 * c2, y[i][j]),
                (-c2, y[i][j + 1]),
                (-c2, y[i + 1][j - 1]),
                (2.0 * c2, y[i + 1][j]),
                (-c2, y[i + 1][j + 1]),
            ]
            m.add_constraint(Constraint.scalar(AffExpr(terms), "EQ", 0.0))
    for j in range(P.n + 1):
        m.add_constraint(Constraint.scalar(AffExpr([(1.0, y[0][j])]), "EQ", 0.0))
    for i in range(P.m + 1):
        terms = [(1.0, y[i][2]), (-4.0, y[i][1]), (3.0, y[i][0])]
        m.add_constraint(Constraint.scalar(AffExpr(terms), "EQ", 0.0))
    c3 = 1.0 / (2.0 * dx)
    for i in range(P.m + 1):
        terms = [
            (c3, y[i][P.n - 2]),
            (-4.0 * c3, y[i][P.n - 1]),
            (3.0 * c3, y[i][P.n]),
            (-1.0, u[i]),
            (1.0, y[i][P.n]),
        ]
        m.add_constraint(Constraint.scalar(AffExpr(terms), "EQ", 0.0))
    return m


@dataclass(frozen=True)
class FacParams:
    """Customer grid size G (customers at i/G spacing) and facility count F."""

    G: int
    F: int

    def __post_init__(self):
        if self.G < 1 or self.F < 1:
            raise ValueError(f"need G >= 1 and F >= 1, got G={self.G}, F={self.F}")

    def customers(self) -> list:
        return [
            (i / self.G, j / self.G)
            for i in range(self.G + 1)
            for j in range(self.G + 1)
        ]


def fac_big_m(customers: Sequence) -> float:
    """Exact max pairwise customer distance."""
    best = 0.0
    for a in range(len(customers)):
        xa, ya = customers[a]
        for b in range(a + 1, len(customers)):
            xb, yb = customers[b]
            best = max(best, math.hypot(xa - xb, ya - yb))
    return best


def build_fac(params: FacParams) -> Model:
    """Min-max facility location: minimize the worst customer distance.

    Variables: d, then facility coordinates y[f] (two each), then
    binary assignments z[c][f]. The distance requirement for pair
    (c, f) is the cone ||x_c - y_f|| <= d + M(1 - z_cf); assignment
    rows force sum_f z_cf = 1.
    """
    P = params
    customers = P.customers()
    M = fac_big_m(customers)
    m = Model()
    d = m.add_variable(0.0)
    yv = [(m.add_variable(), m.add_variable()) for _ in range(P.F)]
    z = [
        [m.add_variable(0.0, 1.0, integer=True) for _ in range(P.F)]
        for _ in range(len(customers))
    ]
    for c, (cx, cy) in enumerate(customers):
        for f in range(P.F):
            t = AffExpr([(1.0, d), (-M, z[c][f])], constant=M)
            x_exprs = [
                AffExpr([(-1.0, yv[f][0])], constant=cx),
                AffExpr([(-1.0, yv[f][1])], constant=cy),
            ]
            m.add_constraint(Constraint.cone(t, x_exprs))
    for c in range(len(customers)):
        m.add_constraint(
            Constraint.scalar(AffExpr([(1.0, z[c][f]) for f in range(P.F)]), "EQ", 1.0)
        )
    m.set_objective("min", AffExpr([(1.0, d)]))
    return m


@dataclass(frozen=True)
class ClnlbeamParams:
    """Beam discretization n and objective weight alpha; h defaults to 1/n."""

    n: int
    alpha: float = 350.0
    h: Optional[float] = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need n >= 2, got {self.n}")

    def resolved_h(self) -> float:
        return self.h if self.h is not None else 1.0 / self.n


def build_clnlbeam(params: ClnlbeamParams) -> Model:
    """Beam control: trigonometric objective over t plus quadratic control
    cost over u, coupled by displacement and angle difference rows.

    Variables: t[0..n], x[0..n], u[0..n] (3(n+1) total); endpoints of
    t and x are fixed through their bounds. Rows: n nonlinear
    displacement rows then n linear angle rows (2n total).
    """
    P = params
    n = P.n
    h = P.resolved_h()
    m = Model()
    t = [m.add_variable(-1.0, 1.0) for _ in range(n + 1)]
    x = [m.add_variable(-0.05, 0.05) for _ in range(n + 1)]
    u = [m.add_variable() for _ in range(n + 1)]
    for v in (t[0], t[n], x[0], x[n]):
        m.lb[v.index] = 0.0
        m.ub[v.index] = 0.0

    g = nlexpr.GraphBuilder(m)
    half_h = g.const(h / 2.0)
    half_ah = g.const(P.alpha * h / 2.0)
    pieces = []
    for i in range(n):
        pieces.append(half_h * g.var(u[i + 1]) ** 2)
        pieces.append(half_h * g.var(u[i]) ** 2)
        pieces.append(half_ah * nlexpr.cos(g.var(t[i + 1])))
        pieces.append(half_ah * nlexpr.cos(g.var(t[i])))
    nlexpr.set_nl_objective(m, "min", g.finish(g.sum(pieces)))

    w = 1.0 / (2.0 * n)
    for i in range(n):
        gb = nlexpr.GraphBuilder(m)
        body = (
            gb.var(x[i + 1])
            - gb.var(x[i])
            - gb.const(w) * (nlexpr.sin(gb.var(t[i + 1])) + nlexpr.sin(gb.var(t[i])))
        )
        nlexpr.add_nl_constraint(m, gb.finish(body), "EQ", 0.0)
    for i in range(n):
        terms = [(1.0, t[i + 1]), (-1.0, t[i]), (-w, u[i + 1]), (-w, u[i])]
        m.add_constraint(Constraint.scalar(AffExpr(terms), "EQ", 0.0))
    return m


def build_quadexample(d: int, c: Optional[Sequence[float]] = None) -> Model:
    """Dense bilinear probe: constant 1 plus, for every grid pair (i, j),
    a first-row interaction weighted by |c_j - i| (c_j defaults to j).

    Exactly 2 d^2 term appends, so build time scales with d^2.
    """
    if d < 1:
        raise ValueError(f"need d >= 1, got {d}")
    if c is None:
        c = [float(j) for j in range(1, d + 1)]
    if len(c) != d:
        raise ValueError(f"need {d} weights, got {len(c)}")
    m = Model()
    x = [[m.add_variable(0.0, 1.0) for _ in range(d)] for _ in range(d)]

    def terms():
        yield 1.0
        for i in range(1, d + 1):
            for j in range(1, d + 1):
                w = abs(c[j - 1] - i)
                yield (w, x[0][j - 1])
                yield (-w, x[i - 1][j - 1], x[0][j - 1])

    m.set_objective("min", expr_sum(terms(), size_hint=2 * d * d + 1))
    return m


def build_l2ball(n: int) -> Model:
    """Maximize the coordinate sum over the unit ball within a box."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    m = Model()
    xs = [m.add_variable(-1.0, 1.0) for _ in range(n)]
    m.set_objective("max", AffExpr([(1.0, v) for v in xs]))
    m.add_constraint(
        Constraint.cone(
            AffExpr(constant=1.0), [AffExpr([(1.0, v)]) for v in xs]
        )
    )
    return m


# -- timing harness ------------------------------------------------------

@dataclass
class BenchRow:
    family: str
    size: int
    build_ms: float
    extract_ms: float
    eval3_ms: Optional[float]

    def csv(self) -> str:
        e3 = "" if self.eval3_ms is None else f"{self.eval3_ms:.3f}"
        return f"{self.family},{self.size},{self.build_ms:.3f},{self.extract_ms:.3f},{e3}"


def _build_family(family: str, size: int, config: Optional[dict] = None) -> Model:
    cfg = dict(config or {})
    if family == "mincostflow":
        return build_mincostflow(DEFAULT_FLOW_DATA)
    if family == "lqcp":
        return build_lqcp(LqcpParams(m=size, n=size, **cfg))
    if family == "fac":
        return build_fac(FacParams(G=size, F=size))
    if family == "clnlbeam":
        return build_clnlbeam(ClnlbeamParams(n=size, **cfg))
    if family == "quadexample":
        return build_quadexample(size)
    if family == "l2ball":
        return build_l2ball(size)
    raise ValueError(f"unknown family {family!r}")


FAMILIES = ("mincostflow", "lqcp", "fac", "clnlbeam", "quadexample", "l2ball")

# past these sizes the three-round derivative timing is skipped
_EVAL3_CAPS = {"lqcp": 200, "quadexample": 400, "clnlbeam": 5000, "l2ball": 2000}

_BUILD_CAPS = {"lqcp": 2000, "clnlbeam": 50_000, "quadexample": 2000, "fac": 30,
               "l2ball": 100_000}


def interior_point(model: Model) -> list:
    """Deterministic point strictly inside all finite bounds."""
    x = []
    for j in range(model.num_vars):
        lb, ub = model.lb[j], model.ub[j]
        if lb == -math.inf and ub == math.inf:
            x.append(0.3 + 0.01 * (j % 10))
        elif lb == -math.inf:
            x.append(ub - 0.5)
        elif ub == math.inf:
            x.append(lb + 0.5)
        else:
            x.append(0.5 * (lb + ub))
    return x


def _time_eval3(model: Model) -> float:
    ev = NlpEvaluator.from_model(model)
    x = interior_point(model)
    lam = [1.0] * (ev.m_g + ev.m_h)
    t0 = time.perf_counter()
    for _ in range(3):
        ev.eval_grad_objective(x)
        ev.eval_jacobian(x)
        ev.eval_hessian_lagrangian(x, 1.0, lam)
    return (time.perf_counter() - t0) * 1000.0


def bench_one(family: str, size: int, config: Optional[dict] = None,
              eval3: bool = True) -> BenchRow:
    """Time one family at one size: build, extraction, and three rounds
    of derivative evaluation (skipped for conic models and past caps)."""
    cap = _BUILD_CAPS.get(family)
    if cap is not None and size > cap:
        raise ValueError(f"{family} size {size} is past the desk cap {cap}")
    t0 = time.perf_counter()
    model = _build_family(family, size, config)
    build_ms = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    if model.nl_objective is not None or model.nl_constraints:
        NlpEvaluator.from_model(model)
    else:
        to_standard_form(model)
    extract_ms = (time.perf_counter() - t0) * 1000.0

    eval3_ms = None
    has_cones = any(c.is_cone for c in model.constraints)
    if eval3 and not has_cones and size <= _EVAL3_CAPS.get(family, 10**9):
        eval3_ms = _time_eval3(model)
    return BenchRow(family, size, build_ms, extract_ms, eval3_ms)


def timing_harness(specs: Sequence, config: Optional[dict] = None,
                   eval3: bool = True) -> list:
    """Bench rows for (family, size) pairs, in input order.

    AMLKIT_THREADS > 1 runs families on a thread pool (wall times then
    include interpreter contention; the deterministic columns are
    unaffected).
    """
    threads = int(os.environ.get("AMLKIT_THREADS", "1") or "1")
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(bench_one, fam, size, config, eval3)
                for fam, size in specs
            ]
            return [f.result() for f in futures]
    return [bench_one(fam, size, config, eval3) for fam, size in specs]
