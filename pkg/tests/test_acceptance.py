"""Acceptance gate: every deliverable behavior, one pass/fail line each.

Run with `pytest -s tests/test_acceptance.py` to see the lines; each
criterion asserts, so a regression fails the suite rather than just
changing a printout. Tolerances and time caps are pinned here."""

import math
import random
import time

import pytest

import oracles
import amlkit.solve as solve_mod
from amlkit import AffExpr, Model, nlexpr, to_standard_form
from amlkit.ad import (
    NlpEvaluator,
    ReverseWorkspace,
    forward_dual,
    gradient,
    hessian_vector_product,
)
from amlkit.benchlib import (
    ClnlbeamParams,
    FacParams,
    LqcpParams,
    build_clnlbeam,
    build_fac,
    build_l2ball,
    build_lqcp,
    build_mincostflow,
    build_quadexample,
)
from amlkit.coloring import SparsityPattern, color, recover
from amlkit.model import canonicalize
from amlkit.solve import SolverSession, branch_and_bound, cutting_plane_solve, lp_solve

SQRT2 = math.sqrt(2.0)


def _criterion(name, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'}: {name} ({detail})", flush=True)
    assert ok, f"{name}: {detail}"


class _CountingSession(SolverSession):
    instances: list = []

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        _CountingSession.instances.append(self)


@pytest.fixture
def counted_sessions(monkeypatch):
    _CountingSession.instances = []
    monkeypatch.setattr(solve_mod, "SolverSession", _CountingSession)
    return _CountingSession.instances


# 1 ------------------------------------------------------------------


def test_pattern5_coloring_and_exact_recovery():
    t0 = time.perf_counter()
    entries = [(0, 0), (0, 1), (0, 3), (1, 1), (1, 2), (2, 2), (3, 3), (4, 4)]
    pattern = SparsityPattern(5, entries)
    col = color(pattern)
    rng = random.Random(5)
    dense = [[0.0] * 5 for _ in range(5)]
    for i, j in entries:
        dense[i][j] = dense[j][i] = rng.uniform(-2.0, 2.0)
    columns = [
        [sum(dense[r][c] * seed[c] for c in range(5)) for r in range(5)]
        for seed in col.seeds
    ]
    got = recover(col, columns)
    err = max(abs(g - dense[i][j]) for (i, j), g in zip(pattern.entries, got))
    elapsed = time.perf_counter() - t0
    ok = col.k == 2 and err <= 1e-12 and elapsed < 1.0
    _criterion(
        "five-vertex pattern: two colors and exact recovery",
        ok,
        f"colors={col.k}, max_abs_err={err:.2e}, {elapsed:.3f}s < 1s",
    )


# 2 ------------------------------------------------------------------


def test_beam_hessian_stays_diagonal_and_matches_dense_oracle():
    t0 = time.perf_counter()
    rng = random.Random(2)
    worst = 0.0
    all_diag = True
    colors = set()
    for n in (5, 500, 5000):
        P = ClnlbeamParams(n=n)
        ev = NlpEvaluator.from_model(build_clnlbeam(P))
        pat = ev.hessian_sparsity()
        all_diag &= all(i == j for i, j in pat)
        colors.add(ev.hess_coloring.k)
        x = [rng.uniform(-0.4, 0.4) for _ in range(3 * (n + 1))]
        lam = [1.0] * (ev.m_g + ev.m_h)
        # one color means one product, seeded by the all-ones vector
        got = ev.eval_hessian_lagrangian(x, 1.0, lam)
        hvp = hessian_vector_product(
            ev._lagrangian, x, [1.0] * len(x), list(ev.params) + [1.0] + lam
        )
        diag = oracles.clnlbeam_lagrangian_diagonal(
            n, P.alpha, P.resolved_h(), x[: n + 1], x[2 * n + 2:], 1.0, [1.0] * n
        )
        for (i, _), v in zip(pat, got):
            worst = max(worst, oracles.rel_err(v, diag[i]))
            worst = max(worst, oracles.rel_err(hvp[i], diag[i]))
    elapsed = time.perf_counter() - t0
    ok = all_diag and colors == {1} and worst <= 1e-8 and elapsed < 10.0
    _criterion(
        "beam Lagrangian: diagonal pattern, one color, all-ones product "
        "matches the dense oracle at n=5/500/5000",
        ok,
        f"diagonal={all_diag}, colors={sorted(colors)}, "
        f"max_rel_err={worst:.2e} <= 1e-8, {elapsed:.2f}s < 10s",
    )


# 3 ------------------------------------------------------------------


def _rich_graphs():
    """Four-variable graphs mixing every differentiable operation."""
    subjects = []

    def fresh():
        m = Model()
        g = nlexpr.GraphBuilder(m)
        return g, [g.var(m.add_variable()) for _ in range(4)]

    g, (a, b, c, d) = fresh()
    subjects.append(g.finish(nlexpr.sin(a * b) + nlexpr.exp(c / (2.0 + d * d))))

    g, (a, b, c, d) = fresh()
    subjects.append(
        g.finish((a + 1.5) ** 1.5 / (b * b + 3.0) + nlexpr.log(3.0 + c * c)
                 * nlexpr.cos(d))
    )

    g, (a, b, c, d) = fresh()
    subjects.append(g.finish(g.prod([a, b, c, d]) + nlexpr.sqrt(4.0 + a * a)))
    return subjects


def test_derivative_property_suite():
    t0 = time.perf_counter()
    rng = random.Random(3)
    grad_err = hvp_err = agree_err = 0.0
    for graph in _rich_graphs():
        ws = ReverseWorkspace(graph)
        for _ in range(10):
            x = [rng.uniform(0.2, 1.4) for _ in range(4)]
            grad = gradient(graph, x, workspace=ws)
            fd = oracles.fd_gradient(lambda p: nlexpr.eval_graph(graph, p), x)
            grad_err = max(grad_err, oracles.max_rel_err(grad, fd))
            v = [rng.uniform(-1.0, 1.0) for _ in range(4)]
            hvp = hessian_vector_product(graph, x, v)
            fdh = oracles.fd_hvp(
                lambda p: gradient(graph, p), x, v, eps=1e-5
            )
            hvp_err = max(hvp_err, oracles.max_rel_err(hvp, fdh))
            for j in range(4):
                seed = [1.0 if i == j else 0.0 for i in range(4)]
                _, dot = forward_dual(graph, x, seed)
                agree_err = max(agree_err, oracles.rel_err(grad[j], dot))
    elapsed = time.perf_counter() - t0
    ok = (grad_err <= 1e-6 and hvp_err <= 1e-5 and agree_err <= 1e-12
          and elapsed < 60.0)
    _criterion(
        "derivative properties: gradient vs finite differences, "
        "Hessian products vs differenced gradients, reverse vs forward",
        ok,
        f"grad_err={grad_err:.2e} <= 1e-6, hvp_err={hvp_err:.2e} <= 1e-5, "
        f"agree_err={agree_err:.2e} <= 1e-12, {elapsed:.2f}s < 60s",
    )


# 4 ------------------------------------------------------------------


def test_cutting_plane_ball_small_and_budget(counted_sessions):
    t0 = time.perf_counter()
    small = cutting_plane_solve(build_l2ball(2), trace=True)
    small_ok = (
        small.status == "optimal"
        and abs(small.objective - 1.414214) <= 1e-5
        and small.cuts == small.trace[-1][0]
    )
    big = cutting_plane_solve(
        build_l2ball(100), iteration_cap=250, jitter=1e-5, trace=True
    )
    big_ok = (
        big.status in ("optimal", "iteration_limit")
        and abs(big.objective - 10.0) <= 1e-4
        and big.cuts == big.trace[-1][0]
    )
    rebuilds = sum(s.rebuilds for s in counted_sessions)
    elapsed = time.perf_counter() - t0
    ok = small_ok and big_ok and rebuilds == 0 and elapsed < 30.0
    _criterion(
        "cutting planes: two-ball to 1.414214 and hundred-ball to 10.0 "
        "with zero tableau rebuilds and one cut per iteration",
        ok,
        f"small={small.objective:.6f}±1e-5, big={big.objective:.6f}±1e-4 "
        f"({big.status}, {big.cuts} cuts), rebuilds={rebuilds}, "
        f"{elapsed:.2f}s < 30s",
    )


# 5 ------------------------------------------------------------------


def _register_sqroot(model):
    def newton_sqrt(t):
        x = t if t > 1.0 else 1.0
        for _ in range(64):
            nxt = 0.5 * (x + t / x)
            delta = nxt - x
            x = nxt
            if abs(delta) < 1e-14:
                break
        return x

    nlexpr.register_function(model, "sqroot", 1, body=newton_sqrt)


def test_user_function_square_root_end_to_end():
    model = Model()
    _register_sqroot(model)
    v = model.add_variable()
    g = nlexpr.GraphBuilder(model)
    graph = g.finish(g.call_user("sqroot", [g.var(v)]))
    val, dot = forward_dual(graph, [4.0], [1.0])

    opt = Model()
    x = opt.add_variable()
    y = opt.add_variable(-1.0, 1.0)
    opt.set_objective("max", AffExpr([(1.0, x), (1.0, y)]))
    _register_sqroot(opt)
    gb = nlexpr.GraphBuilder(opt)
    xr, yr = gb.var(x), gb.var(y)
    ball = gb.finish(gb.call_user("sqroot", [xr * xr + yr * yr]))
    nlexpr.add_nl_constraint(opt, ball, "<=", 1.0)
    res = cutting_plane_solve(opt, start=[0.6, 0.8])
    ok = (
        abs(val - 2.0) <= 1e-12
        and abs(dot - 0.25) <= 1e-9
        and res.status == "optimal"
        and abs(res.objective - SQRT2) <= 1e-5
    )
    _criterion(
        "iteratively defined square root: value 2.0, derivative 0.25 "
        "through duals, and the cut-driven model reaches sqrt(2)",
        ok,
        f"value={val:.12g}, derivative={dot:.12g}±1e-9, "
        f"optimum={res.objective:.7f}±1e-5",
    )


# 6 ------------------------------------------------------------------


def test_flow_example_counts_and_optimum():
    t0 = time.perf_counter()
    form = to_standard_form(build_mincostflow())
    res = lp_solve(form)
    elapsed = time.perf_counter() - t0
    ok = (
        form.num_vars == 6
        and form.num_rows == 4
        and res.status == "optimal"
        and abs(res.objective - 4.0) <= 1e-9
        and elapsed < 1.0
    )
    _criterion(
        "bundled flow network: six variables, four rows, optimal cost 4.0",
        ok,
        f"vars={form.num_vars}, rows={form.num_rows}, "
        f"objective={res.objective!r}±1e-9, {elapsed:.3f}s < 1s",
    )


# 7 ------------------------------------------------------------------


def _best_build_time(d, rounds=5):
    import gc

    best = math.inf
    for _ in range(rounds):
        gc.collect()
        gc.disable()
        t0 = time.perf_counter()
        build_quadexample(d)
        best = min(best, time.perf_counter() - t0)
        gc.enable()
    return best


def test_quadexample_build_scaling_and_expansion():
    m = build_quadexample(3)
    obj = canonicalize(m.objective)
    const, lin, quad = oracles.quadexample_expansion(3)
    counts_ok = (
        obj.affine.constant == const
        and {v.index: c for c, v in obj.affine.terms} == lin
        and {(v1.index, v2.index): c for c, v1, v2 in obj.quad_terms} == quad
    )
    times = {d: _best_build_time(d) for d in (100, 200, 400)}
    r1 = times[200] / times[100]
    r2 = times[400] / times[200]
    ok = counts_ok and r1 <= 6.0 and r2 <= 6.0
    _criterion(
        "dense quadratic probe: canonical terms match the symbolic "
        "expansion and doubling the grid at most 6x-es the build",
        ok,
        f"terms={'exact' if counts_ok else 'MISMATCH'} "
        f"({len(quad)} quadratic, {len(lin)} linear), "
        f"T(200)/T(100)={r1:.2f}, T(400)/T(200)={r2:.2f} <= 6",
    )


# 8 ------------------------------------------------------------------


def test_facility_location_against_brute_force():
    t0 = time.perf_counter()
    tiny = branch_and_bound(build_fac(FacParams(1, 1)))
    tiny_ok = tiny.status == "optimal" and abs(tiny.objective - SQRT2 / 2) <= 1e-5

    res = branch_and_bound(build_fac(FacParams(2, 2)))
    best_val, _ = oracles.fac_brute_force(2, 2)
    F, C = 2, 9
    flags = res.x[1 + 2 * F:]
    assign = [
        max(range(F), key=lambda f: flags[c * F + f]) for c in range(C)
    ]
    recovered = oracles.fac_assignment_value(2, assign, F)
    elapsed = time.perf_counter() - t0
    ok = (
        tiny_ok
        and res.status == "optimal"
        and abs(res.objective - best_val) <= 1e-5
        and recovered == best_val  # same partition the enumeration found
        and elapsed < 60.0
    )
    _criterion(
        "facility location: single pair at sqrt(2)/2, three-by-three "
        "grid with two facilities matches exhaustive enumeration",
        ok,
        f"tiny={tiny.objective:.7f}±1e-5, grid={res.objective:.7f} vs "
        f"brute={best_val:.7f}, recovered assignment exact="
        f"{recovered == best_val}, {elapsed:.1f}s < 60s",
    )


# 9 ------------------------------------------------------------------


def test_builders_match_independent_formulas():
    rng = random.Random(9)
    worst = 0.0

    P = LqcpParams(m=3, n=4)
    form = to_standard_form(build_lqcp(P))
    dx, dt, h2, yt = P.resolved()
    for _ in range(10):
        x = [rng.uniform(-0.8, 0.9) for _ in range(form.num_vars)]
        y = [[x[i * 5 + j] for j in range(5)] for i in range(4)]
        u = x[20:]
        worst = max(worst, oracles.rel_err(
            form.objective_value(x),
            oracles.lqcp_objective(3, 4, P.a, dx, dt, yt, y, u),
        ))
        worst = max(worst, oracles.max_rel_err(
            [v - b for v, b in zip(form.row_values(x), form.b)],
            oracles.lqcp_residuals(3, 4, dx, dt, h2, y, u),
        ))

    P = ClnlbeamParams(n=6)
    ev = NlpEvaluator.from_model(build_clnlbeam(P))
    h = P.resolved_h()
    for _ in range(10):
        pt = [rng.uniform(-1.0, 1.0) for _ in range(21)]
        t, xx, u = pt[:7], pt[7:14], pt[14:]
        worst = max(worst, oracles.rel_err(
            ev.eval_objective(pt),
            oracles.clnlbeam_objective(6, P.alpha, h, t, xx, u),
        ))
        disp, angle = oracles.clnlbeam_residuals(6, t, xx, u)
        _, h_vals = ev.eval_constraints(pt)
        worst = max(worst, oracles.max_rel_err(h_vals, angle + disp))

    fac = build_fac(FacParams(2, 2))
    for _ in range(10):
        x = [rng.uniform(0.0, 1.0) for _ in range(fac.num_vars)]
        d, F = x[0], 2
        y = [(x[1 + 2 * f], x[2 + 2 * f]) for f in range(F)]
        z = [[x[5 + c * F + f] for f in range(F)] for c in range(9)]
        want = oracles.fac_cone_residuals(2, F, d, y, z)
        got = [
            math.sqrt(sum(e.evaluate(x) ** 2 for e in con.cone_x))
            - con.cone_t.evaluate(x)
            for con in fac.constraints if con.is_cone
        ]
        worst = max(worst, oracles.max_rel_err(got, want))

    ok = worst <= 1e-10
    _criterion(
        "generator transcription guard: control, beam, and facility "
        "models equal their closed-form oracles at random points",
        ok,
        f"max_rel_err={worst:.2e} <= 1e-10 over 10 points per family",
    )
