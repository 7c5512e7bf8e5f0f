import itertools
import math
import random

import numpy as np
import pytest

from amlkit import AffExpr, Model, QuadExpr, SessionStateError, to_standard_form
from amlkit.simplex import SolverSession

import oracles as O


def lp(n_bounds, rows, obj, sense="min"):
    """Tiny LP builder: n_bounds is a list of (lb, ub)."""
    m = Model()
    xs = [m.add_variable(lo, hi) for lo, hi in n_bounds]
    for pairs, s, rhs in rows:
        m.add_linear_constraint([(c, xs[j]) for j, c in pairs], s, rhs)
    m.set_objective(sense, AffExpr([(c, xs[j]) for j, c in obj]))
    return m


def solve(model, **kw):
    session = SolverSession(to_standard_form(model), **kw)
    return session, session.solve()


def test_two_variable_optimal():
    # max 3x + 2y s.t. x + y <= 4, x + 3y <= 6, 0 <= x,y
    model = lp([(0, math.inf), (0, math.inf)],
               [([(0, 1.0), (1, 1.0)], "<=", 4.0),
                ([(0, 1.0), (1, 3.0)], "<=", 6.0)],
               [(0, 3.0), (1, 2.0)], sense="max")
    _, r = solve(model)
    assert r.status == "optimal"
    assert r.objective == pytest.approx(12.0)  # x=4, y=0
    assert r.x == pytest.approx([4.0, 0.0])


def test_unbounded_detected():
    model = lp([(0, math.inf)], [], [(0, 1.0)], sense="max")
    _, r = solve(model)
    assert r.status == "unbounded"
    assert r.objective is None


def test_infeasible_detected():
    model = lp([(0, 1.0)], [([(0, 1.0)], ">=", 2.0)], [(0, 1.0)])
    _, r = solve(model)
    assert r.status == "infeasible"


def test_equality_rows_via_two_phase():
    # min x + y s.t. x + y = 2, x - y = 0  ->  x = y = 1
    model = lp([(0, math.inf), (0, math.inf)],
               [([(0, 1.0), (1, 1.0)], "==", 2.0),
                ([(0, 1.0), (1, -1.0)], "==", 0.0)],
               [(0, 1.0), (1, 1.0)])
    _, r = solve(model)
    assert r.status == "optimal"
    assert r.x == pytest.approx([1.0, 1.0])


def test_free_and_shifted_and_flipped_bounds():
    # free variable wants -5; [2, 6] wants 2; (-inf, 3] wants 3 under max
    model = lp([(-math.inf, math.inf), (2.0, 6.0), (-math.inf, 3.0)],
               [([(0, 1.0)], ">=", -5.0)],
               [(0, 1.0), (1, 1.0), (2, -1.0)])
    _, r = solve(model)
    assert r.status == "optimal"
    assert r.x == pytest.approx([-5.0, 2.0, 3.0])
    assert r.objective == pytest.approx(-5.0 + 2.0 - 3.0)


def test_fixed_variable_bounds():
    model = lp([(2.5, 2.5), (0.0, 1.0)],
               [([(0, 1.0), (1, 1.0)], "<=", 3.0)],
               [(0, -1.0), (1, -1.0)])
    _, r = solve(model)
    assert r.status == "optimal"
    assert r.x[0] == pytest.approx(2.5)
    assert r.x[1] == pytest.approx(0.5)


def test_negative_rhs_rows_normalized():
    # row with negative rhs exercises the sign-flip path in the build
    model = lp([(0, 5.0), (0, 5.0)],
               [([(0, -1.0), (1, -1.0)], "<=", -2.0)],  # x + y >= 2
               [(0, 1.0), (1, 2.0)])
    _, r = solve(model)
    assert r.status == "optimal"
    assert r.objective == pytest.approx(2.0)
    assert r.x == pytest.approx([2.0, 0.0])


def test_beale_degenerate_instance_terminates():
    model = lp(
        [(0, math.inf)] * 4,
        [([(0, 0.25), (1, -60.0), (2, -1 / 25.0), (3, 9.0)], "<=", 0.0),
         ([(0, 0.5), (1, -90.0), (2, -1 / 50.0), (3, 3.0)], "<=", 0.0),
         ([(2, 1.0)], "<=", 1.0)],
        [(0, -0.75), (1, 150.0), (2, -0.02), (3, 6.0)],
    )
    _, r = solve(model)
    assert r.status == "optimal"
    assert r.objective == pytest.approx(-0.05)


def test_quadratic_objective_rejected():
    m = Model()
    x = m.add_variable(0.0, 1.0)
    q = QuadExpr()
    q.add_term(1.0, x, x)
    m.set_objective("min", q)
    with pytest.raises(ValueError):
        SolverSession(to_standard_form(m))


def test_result_json_shape():
    model = lp([(0, 1.0)], [], [(0, 1.0)])
    _, r = solve(model)
    d = r.to_json_dict()
    assert set(d) == {"status", "objective", "x", "pivots", "cuts", "nodes"}


def test_current_point_before_build_rejected():
    model = lp([(0, 1.0)], [], [(0, 1.0)])
    session = SolverSession(to_standard_form(model))
    with pytest.raises(SessionStateError):
        session.current_point()


def test_solve_is_idempotent_when_optimal():
    model = lp([(0, 4.0), (0, 4.0)],
               [([(0, 1.0), (1, 1.0)], "<=", 4.0)],
               [(0, -3.0), (1, -2.0)])
    session, r1 = solve(model)
    pivots_after = session.pivots
    r2 = session.solve()
    assert session.pivots == pivots_after
    assert r2.objective == r1.objective


def test_incremental_rows_warm_start_and_counters():
    # start: max x + y over the unit square; add cuts one at a time
    model = lp([(0, 1.0), (0, 1.0)], [], [(0, 1.0), (1, 1.0)], sense="max")
    session, r = solve(model)
    assert r.objective == pytest.approx(2.0)
    assert session.rebuilds == 0

    session.add_row([(0, 1.0), (1, 1.0)], "<=", 1.5)
    r = session.resolve()
    assert r.status == "optimal"
    assert r.objective == pytest.approx(1.5)

    session.add_row([(0, 1.0), (1, -1.0)], ">=", -0.25)  # y <= x + 0.25
    r = session.resolve()
    assert r.status == "optimal"
    assert r.objective == pytest.approx(1.5)
    assert r.x[1] <= r.x[0] + 0.25 + 1e-9

    session.add_row([(0, 1.0)], "==", 0.5)
    r = session.resolve()
    assert r.status == "optimal"
    assert r.x[0] == pytest.approx(0.5)
    assert session.rows_added == 3
    assert session.rebuilds == 0


def test_rows_added_before_first_solve_join_initial_build():
    model = lp([(0, 2.0), (0, 2.0)], [], [(0, 1.0), (1, 1.0)], sense="max")
    session = SolverSession(to_standard_form(model))
    session.add_row([(0, 1.0), (1, 1.0)], "<=", 1.0)
    r = session.solve()
    assert r.objective == pytest.approx(1.0)
    assert session.rows_added == 1
    assert session.rebuilds == 0


def test_warm_start_costs_fewer_pivots_than_cold():
    rng = random.Random(5)
    cuts = [([(0, rng.uniform(0.2, 1.0)), (1, rng.uniform(0.2, 1.0))], "<=",
             rng.uniform(1.0, 1.6)) for _ in range(12)]
    base = lp([(0, 2.0), (0, 2.0)], [], [(0, 1.0), (1, 1.0)], sense="max")

    warm_session, _ = solve(base)
    for pairs, s, rhs in cuts:
        warm_session.add_row(pairs, s, rhs)
        warm_session.resolve()
    warm_total = warm_session.pivots

    cold_total = 0
    applied = []
    for pairs, s, rhs in cuts:
        applied.append((pairs, s, rhs))
        model = lp([(0, 2.0), (0, 2.0)], list(applied),
                   [(0, 1.0), (1, 1.0)], sense="max")
        cold_session, _ = solve(model)
        cold_total += cold_session.pivots
    assert warm_total < cold_total


def test_jitter_keeps_true_objective_reporting():
    model = lp([(0, 1.0), (0, 1.0)],
               [([(0, 1.0), (1, 1.0)], "<=", 1.0)],
               [(0, 1.0), (1, 1.0)], sense="max")
    _, plain = solve(model)
    _, jittered = solve(model, jitter=1e-7)
    assert jittered.status == "optimal"
    # perturbation steers pivots only; reported value uses the true objective
    assert jittered.objective == pytest.approx(plain.objective, abs=1e-9)


def test_pivot_cap_reports_iteration_limit():
    model = lp([(0, 10.0)] * 3,
               [([(0, 1.0), (1, 1.0)], "<=", 4.0),
                ([(1, 1.0), (2, 1.0)], "<=", 4.0),
                ([(0, 1.0), (2, 1.0)], "<=", 4.0)],
               [(0, -1.0), (1, -1.0), (2, -1.0)])
    session = SolverSession(to_standard_form(model), pivot_cap=1)
    r = session.solve()
    assert r.status == "iteration_limit"


def _vertex_enumeration(c, rows, ubs):
    """Best vertex of {Ax <= b, 0 <= x <= u} maximizing c^T x by brute
    force over all choices of n active constraints."""
    n = len(c)
    cons = []
    for pairs, rhs in rows:
        a = np.zeros(n)
        for j, v in pairs:
            a[j] = v
        cons.append((a, rhs))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cons.append((e, ubs[j]))
        cons.append((-e, 0.0))
    best = None
    for chosen in itertools.combinations(range(len(cons)), n):
        A = np.array([cons[k][0] for k in chosen])
        b = np.array([cons[k][1] for k in chosen])
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            continue
        if all(a @ x <= rhs + 1e-8 for a, rhs in cons):
            val = float(np.dot(c, x))
            if best is None or val > best:
                best = val
    return best


def test_random_boxed_lps_match_vertex_enumeration():
    rng = random.Random(20240601)
    for trial in range(60):
        n = rng.randint(2, 3)
        m_rows = rng.randint(1, 3)
        ubs = [rng.uniform(0.5, 3.0) for _ in range(n)]
        rows = []
        for _ in range(m_rows):
            pairs = [(j, rng.uniform(-2.0, 2.0)) for j in range(n)]
            rows.append((pairs, rng.uniform(0.5, 3.0)))  # rhs > 0: x=0 feasible
        c = [rng.uniform(-2.0, 2.0) for _ in range(n)]
        model = lp([(0.0, u) for u in ubs],
                   [(pairs, "<=", rhs) for pairs, rhs in rows],
                   list(enumerate(c)), sense="max")
        _, r = solve(model)
        want = _vertex_enumeration(c, rows, ubs)
        assert r.status == "optimal"
        assert r.objective == pytest.approx(want, abs=1e-7), f"trial {trial}"


def test_flow_instance_exact():
    from amlkit.benchlib import DEFAULT_FLOW_DATA, build_mincostflow

    form = to_standard_form(build_mincostflow(DEFAULT_FLOW_DATA))
    session = SolverSession(form)
    r = session.solve()
    want_cost, want_flows = O.flow_path_enumeration(
        DEFAULT_FLOW_DATA.edges, DEFAULT_FLOW_DATA.n)
    assert r.status == "optimal"
    assert r.objective == pytest.approx(want_cost, abs=1e-9)
    assert r.x == pytest.approx(want_flows, abs=1e-9)
