import random
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amlkit import Model, PlanMismatchError
from amlkit.coloring import (
    Coloring,
    SparsityPattern,
    color,
    describe_coloring,
    detect_sparsity,
    plan_from_classes,
    recover,
)
from amlkit.nlexpr import GraphBuilder, exp, min2, register_function, sin

PATTERN5 = [(0, 0), (0, 1), (0, 3), (1, 1), (1, 2), (2, 2), (3, 3), (4, 4)]


def test_pattern_validation_and_normalization():
    p = SparsityPattern(3, [(2, 1), (0, 0), (1, 2), (1, 2)])
    assert p.entries == [(0, 0), (1, 2)]
    with pytest.raises(ValueError):
        SparsityPattern(2, [(0, 2)])
    with pytest.raises(ValueError):
        SparsityPattern(2, [(-1, 0)])


# -- sparsity detection ------------------------------------------------------

def test_detect_separable_squares_is_diagonal():
    m = Model()
    xs = [m.add_variable() for _ in range(6)]
    g = GraphBuilder(m)
    graph = g.finish(g.sum([g.var(v) ** 2 for v in xs]))
    pat = detect_sparsity(graph)
    assert pat.entries == [(j, j) for j in range(6)]


def test_detect_exp_of_squares_is_full_two_by_two():
    m = Model()
    x = m.add_variable()
    y = m.add_variable()
    g = GraphBuilder(m)
    graph = g.finish(exp(g.var(x) ** 2 + g.var(y) ** 2))
    assert detect_sparsity(graph).entries == [(0, 0), (0, 1), (1, 1)]


def test_detect_product_couples_operands():
    m = Model()
    xs = [m.add_variable() for _ in range(3)]
    g = GraphBuilder(m)
    graph = g.finish(g.var(xs[0]) * g.var(xs[1]) + g.var(xs[2]))
    assert detect_sparsity(graph).entries == [(0, 1)]


def test_detect_division_couples_denominator_with_itself():
    m = Model()
    x = m.add_variable()
    y = m.add_variable()
    g = GraphBuilder(m)
    graph = g.finish(g.var(x) / g.var(y))
    assert detect_sparsity(graph).entries == [(0, 1), (1, 1)]


def test_detect_linear_pieces_add_nothing():
    m = Model()
    x = m.add_variable()
    y = m.add_variable()
    g = GraphBuilder(m)
    graph = g.finish(abs(g.var(x)) + min2(g.var(x), g.var(y)) + 2.0 * g.var(y))
    assert detect_sparsity(graph).entries == []


def test_detect_pow_zero_and_one_add_nothing():
    m = Model()
    x = m.add_variable()
    g = GraphBuilder(m)
    graph = g.finish(g.var(x) ** 1.0 + (g.var(x) ** 0.0) + sin(g.var(x)))
    assert detect_sparsity(graph).entries == [(0, 0)]


def test_detect_user_call_warns_and_adds_zero_block():
    m = Model()
    x = m.add_variable()
    y = m.add_variable()
    register_function(m, "mix", 2, body=lambda a, b: a * b)
    g = GraphBuilder(m)
    graph = g.finish(g.call_user("mix", g.var(x), g.var(y)) + g.var(x) ** 2)
    with pytest.warns(RuntimeWarning, match="mix"):
        pat = detect_sparsity(graph)
    assert pat.entries == [(0, 0)]


def test_detect_over_constraint_set_unions():
    m = Model()
    xs = [m.add_variable() for _ in range(4)]
    g1 = GraphBuilder(m)
    a = g1.finish(g1.var(xs[0]) * g1.var(xs[1]))
    g2 = GraphBuilder(m)
    b = g2.finish(sin(g2.var(xs[3])))
    pat = detect_sparsity([a, b], n=4)
    assert pat.n == 4
    assert pat.entries == [(0, 1), (3, 3)]


# -- coloring ----------------------------------------------------------------

def _two_colored_subgraphs_are_forests(pattern, colors):
    """Explicit acyclicity check: for every color pair, the subgraph on
    edges between those colors must contain no cycle."""
    edges = [(i, j) for i, j in pattern.entries if i != j]
    k = max(colors.values(), default=-1) + 1
    for ca in range(k):
        for cb in range(ca + 1, k):
            parent = {}

            def find(v):
                while parent.get(v, v) != v:
                    parent[v] = parent.get(parent[v], parent[v])
                    v = parent[v]
                return v

            for i, j in edges:
                if {colors[i], colors[j]} == {ca, cb}:
                    ri, rj = find(i), find(j)
                    if ri == rj:
                        return False
                    parent[ri] = rj
    return True


def _proper(pattern, colors):
    return all(colors[i] != colors[j] for i, j in pattern.entries if i != j)


def test_diagonal_pattern_one_color_all_ones_seed():
    pat = SparsityPattern(7, [(j, j) for j in range(7)])
    col = color(pat)
    assert col.k == 1
    assert col.seeds == [[1.0] * 7]
    product = [3.0 * (j + 1) for j in range(7)]
    assert recover(col, [product]) == pytest.approx(product)


def test_empty_pattern_needs_zero_products():
    pat = SparsityPattern(4, [])
    col = color(pat)
    assert col.k == 0
    assert col.seeds == []
    assert recover(col, []) == []


def test_pattern5_two_colors_and_exact_recovery():
    pat = SparsityPattern(5, PATTERN5)
    col = color(pat)
    assert col.k == 2
    assert _proper(pat, col.colors)
    assert _two_colored_subgraphs_are_forests(pat, col.colors)
    rng = random.Random(3)
    dense = [[0.0] * 5 for _ in range(5)]
    for i, j in PATTERN5:
        dense[i][j] = dense[j][i] = rng.uniform(-3, 3)
    cols = [[sum(dense[r][c] * s[c] for c in range(5)) for r in range(5)]
            for s in col.seeds]
    got = recover(col, cols)
    want = [dense[i][j] for i, j in pat.entries]
    assert got == pytest.approx(want, abs=1e-12)


def test_pattern5_published_classes_also_work():
    # the two-class split {x1_based: {0, 2}, {1, 3, 4}} in zero-based indices
    pat = SparsityPattern(5, PATTERN5)
    col = plan_from_classes(pat, [[0, 2], [1, 3, 4]])
    assert col.k == 2
    rng = random.Random(4)
    dense = [[0.0] * 5 for _ in range(5)]
    for i, j in PATTERN5:
        dense[i][j] = dense[j][i] = rng.uniform(-3, 3)
    cols = [[sum(dense[r][c] * s[c] for c in range(5)) for r in range(5)]
            for s in col.seeds]
    got = recover(col, cols)
    assert got == pytest.approx([dense[i][j] for i, j in pat.entries], abs=1e-12)


def test_plan_from_classes_rejects_improper_or_cyclic():
    pat = SparsityPattern(2, [(0, 1)])
    with pytest.raises(ValueError):
        plan_from_classes(pat, [[0, 1]])          # adjacent same color
    square = SparsityPattern(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    with pytest.raises(ValueError):
        plan_from_classes(square, [[0, 2], [1, 3]])  # 2-colored 4-cycle
    with pytest.raises(ValueError):
        plan_from_classes(pat, [[0]])             # vertex 1 uncolored


def test_greedy_avoids_two_colored_cycles_on_square():
    square = SparsityPattern(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    col = color(square)
    assert _proper(square, col.colors)
    assert _two_colored_subgraphs_are_forests(square, col.colors)
    assert col.k >= 3  # a 4-cycle cannot be acyclically 2-colored


def test_recover_mismatched_columns_raises():
    pat = SparsityPattern(3, [(j, j) for j in range(3)])
    col = color(pat)
    with pytest.raises(PlanMismatchError):
        recover(col, [])
    with pytest.raises(PlanMismatchError):
        recover(col, [[1.0, 2.0]])


def _random_pattern(rng, n, density):
    entries = set()
    for i in range(n):
        if rng.random() < 0.8:
            entries.add((i, i))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                entries.add((i, j))
    return SparsityPattern(n, sorted(entries))


def test_random_patterns_recover_to_1e10():
    rng = random.Random(20240601)
    for trial in range(100):
        n = rng.randint(1, 50)
        density = rng.uniform(0.0, 0.2)
        pat = _random_pattern(rng, n, density)
        col = color(pat)
        assert col.k <= n
        assert _proper(pat, col.colors)
        assert _two_colored_subgraphs_are_forests(pat, col.colors)
        dense = [[0.0] * n for _ in range(n)]
        for i, j in pat.entries:
            v = rng.uniform(-5, 5)
            dense[i][j] = dense[j][i] = v
        cols = [[sum(dense[r][c] * s[c] for c in range(n)) for r in range(n)]
                for s in col.seeds]
        got = recover(col, cols)
        want = [dense[i][j] for i, j in pat.entries]
        assert got == pytest.approx(want, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 16), st.random_module())
def test_property_coloring_is_always_valid(n, rnd):
    rng = random.Random(rnd.seed)
    pat = _random_pattern(rng, n, 0.35)
    col = color(pat)
    assert _proper(pat, col.colors)
    assert _two_colored_subgraphs_are_forests(pat, col.colors)
    # seed c is the indicator of class c; untouched variables stay 0 everywhere
    for c, seed in enumerate(col.seeds):
        assert all(
            (seed[v] == 1.0) == (col.colors.get(v) == c) for v in range(n)
        )


def test_describe_coloring_format():
    pat = SparsityPattern(5, PATTERN5)
    text = describe_coloring(color(pat))
    lines = text.splitlines()
    assert lines[0] == "colors: 2"
    assert lines[1].startswith("class 0:")
    assert any(line.startswith("seed 0:") for line in lines)
    assert lines[-1].startswith("plan steps:")


def test_structural_zero_recovers_as_zero():
    # pattern says (0, 1) may be nonzero; the actual matrix has a zero there
    pat = SparsityPattern(2, [(0, 0), (0, 1), (1, 1)])
    col = color(pat)
    dense = [[2.0, 0.0], [0.0, 5.0]]
    cols = [[sum(dense[r][c] * s[c] for c in range(2)) for r in range(2)]
            for s in col.seeds]
    got = recover(col, cols)
    want = [dense[i][j] for i, j in pat.entries]
    assert got == pytest.approx(want, abs=1e-12)
