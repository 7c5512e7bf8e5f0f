"""Hessian sparsity detection, acyclic coloring, and entry recovery.

A sparsity pattern is found structurally from an expression graph, its
adjacency graph is colored so every two-color subgraph is a forest, and
all pattern entries are recovered from one Hessian-vector product per
color: diagonals read directly, off-diagonals by substitution along
each two-colored tree.
"""

from __future__ import annotations

import warnings
from typing import Iterable, Optional, Sequence

from .errors import PlanMismatchError
from .nlexpr import (
    BUILTINS,
    ExprGraph,
    K_CALL,
    K_CONST,
    K_DIV,
    K_NEG,
    K_PARAM,
    K_POW,
    K_PROD,
    K_SUM,
    K_USER,
    K_VAR,
)

__all__ = [
    "SparsityPattern",
    "Coloring",
    "detect_sparsity",
    "color",
    "plan_from_classes",
    "recover",
    "describe_coloring",
]

_EMPTY: frozenset = frozenset()

_LINEAR_BUILTINS = frozenset(("abs", "min", "max"))


class SparsityPattern:
    """Upper-triangle (i, j) entries with i <= j, sorted, plus dimension."""

    __slots__ = ("n", "entries")

    def __init__(self, n: int, entries: Iterable):
        self.n = n
        seen = set()
        for i, j in entries:
            if i > j:
                i, j = j, i
            if not (0 <= i <= j < n):
                raise ValueError(f"entry ({i}, {j}) out of range for n={n}")
            seen.add((i, j))
        self.entries = sorted(seen)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return (
            isinstance(other, SparsityPattern)
            and self.n == other.n
            and self.entries == other.entries
        )

    def __repr__(self):
        return f"SparsityPattern(n={self.n}, {len(self.entries)} entries)"


def detect_sparsity(graphs, n: Optional[int] = None) -> SparsityPattern:
    """Structural Hessian pattern of a graph (or union over several).

    Conservative rules: sums pass children through, products couple the
    operand variable sets pairwise, nonlinear unaries couple the child
    set with itself, piecewise-linear ops (abs, min, max) add nothing.
    User calls contribute a zero block; a warning names them since the
    true block is unknown.
    """
    if isinstance(graphs, ExprGraph):
        graphs = [graphs]
    else:
        graphs = list(graphs)
    if n is None:
        n = 0
        for g in graphs:
            if g.var_set:
                n = max(n, max(g.var_set) + 1)
    pairs: set = set()
    skipped_users: set = set()
    for g in graphs:
        _detect_one(g, pairs, skipped_users)
    if skipped_users:
        warnings.warn(
            "user functions contribute zero Hessian blocks (no second-order "
            "rules): " + ", ".join(sorted(skipped_users)),
            RuntimeWarning,
            stacklevel=2,
        )
    return SparsityPattern(n, pairs)


def _couple(pairs: set, a: frozenset, b: frozenset) -> None:
    for i in a:
        for j in b:
            pairs.add((i, j) if i <= j else (j, i))


def _detect_one(g: ExprGraph, pairs: set, skipped_users: set) -> None:
    nnodes = len(g.kinds)
    varsets: list = [_EMPTY] * nnodes
    for i in range(nnodes):
        k = g.kinds[i]
        if k == K_VAR:
            varsets[i] = frozenset((g.refs[i],))
        elif k in (K_CONST, K_PARAM):
            pass
        elif k in (K_SUM, K_NEG):
            cs = g.children[i]
            if len(cs) == 1:
                varsets[i] = varsets[cs[0]]
            else:
                varsets[i] = frozenset().union(*(varsets[c] for c in cs))
        elif k == K_PROD:
            cs = g.children[i]
            for a in range(len(cs)):
                for b in range(a + 1, len(cs)):
                    _couple(pairs, varsets[cs[a]], varsets[cs[b]])
            varsets[i] = frozenset().union(*(varsets[c] for c in cs))
        elif k == K_POW:
            child = g.children[i][0]
            p = g.payloads[i]
            if p not in (0.0, 1.0):
                _couple(pairs, varsets[child], varsets[child])
            varsets[i] = varsets[child] if p != 0.0 else _EMPTY
        elif k == K_DIV:
            num, den = g.children[i]
            _couple(pairs, varsets[num], varsets[den])
            _couple(pairs, varsets[den], varsets[den])
            varsets[i] = varsets[num] | varsets[den]
        elif k == K_CALL:
            name = BUILTINS[g.refs[i]].name
            cs = g.children[i]
            vs = frozenset().union(*(varsets[c] for c in cs)) if cs else _EMPTY
            if name not in _LINEAR_BUILTINS:
                _couple(pairs, vs, vs)
            varsets[i] = vs
        else:
            skipped_users.add(g.refs[i])
            cs = g.children[i]
            varsets[i] = frozenset().union(*(varsets[c] for c in cs)) if cs else _EMPTY


class _DSU:
    """Union-find over vertex ids, created lazily per color pair."""

    __slots__ = ("parent",)

    def __init__(self):
        self.parent: dict = {}

    def find(self, v):
        p = self.parent
        root = v
        while p.get(root, root) != root:
            root = p[root]
        while p.get(v, v) != v:
            p[v], v = root, p[v]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


class Coloring:
    """Colors, seed directions, and an ordered substitution plan.

    `plan` steps are (entry_index, row_variable, color_column,
    subtract_entry_indices); applying them in order recovers every
    pattern entry from the k product columns.
    """

    __slots__ = ("pattern", "colors", "k", "seeds", "plan")

    def __init__(self, pattern, colors, k, seeds, plan):
        self.pattern = pattern
        self.colors = colors
        self.k = k
        self.seeds = seeds
        self.plan = plan

    def color_classes(self) -> list:
        classes: list = [[] for _ in range(self.k)]
        for v in sorted(self.colors):
            classes[self.colors[v]].append(v)
        return classes


def _adjacency(pattern: SparsityPattern):
    adj: dict = {}
    for i, j in pattern.entries:
        adj.setdefault(i, set())
        adj.setdefault(j, set())
        if i != j:
            adj[i].add(j)
            adj[j].add(i)
    return adj


def color(pattern: SparsityPattern) -> Coloring:
    """Greedy acyclic coloring, descending degree with index tie-break.

    A candidate color is rejected if a neighbor already has it, or if
    it would close a cycle in some two-colored subgraph (tracked with
    one union-find forest per color pair).
    """
    adj = _adjacency(pattern)
    order = sorted(adj, key=lambda v: (-len(adj[v]), v))
    colors: dict = {}
    forests: dict = {}

    def forest(ca, cb) -> _DSU:
        key = (ca, cb) if ca <= cb else (cb, ca)
        if key not in forests:
            forests[key] = _DSU()
        return forests[key]

    for v in order:
        neighbor_colors = {}
        for w in adj[v]:
            if w in colors:
                neighbor_colors.setdefault(colors[w], []).append(w)
        c = 0
        while True:
            ok = c not in neighbor_colors
            if ok:
                for c2, ws in neighbor_colors.items():
                    if len(ws) > 1:
                        f = forest(c, c2)
                        roots = set()
                        for w in ws:
                            r = f.find(w)
                            if r in roots:
                                ok = False
                                break
                            roots.add(r)
                        if not ok:
                            break
            if ok:
                break
            c += 1
        colors[v] = c
        for c2, ws in neighbor_colors.items():
            f = forest(c, c2)
            for w in ws:
                f.union(v, w)
    return _finish_coloring(pattern, colors)


def plan_from_classes(pattern: SparsityPattern, classes: Sequence[Sequence[int]]) -> Coloring:
    """Build a recovery plan for externally chosen color classes.

    Checks that the classes are a proper acyclic coloring of the
    pattern's adjacency graph before planning.
    """
    colors: dict = {}
    for c, cls in enumerate(classes):
        for v in cls:
            if v in colors:
                raise ValueError(f"variable {v} appears in two classes")
            colors[v] = c
    adj = _adjacency(pattern)
    for v in adj:
        if v not in colors:
            raise ValueError(f"variable {v} in the pattern has no class")
    for i, j in pattern.entries:
        if i != j and colors[i] == colors[j]:
            raise ValueError(f"adjacent variables {i} and {j} share a class")
    # every two-colored subgraph must be a forest
    pair_dsu: dict = {}
    for i, j in pattern.entries:
        if i == j:
            continue
        key = tuple(sorted((colors[i], colors[j])))
        dsu = pair_dsu.setdefault(key, _DSU())
        if dsu.find(i) == dsu.find(j):
            raise ValueError(
                f"classes are not an acyclic coloring: edge ({i}, {j}) closes "
                f"a two-colored cycle"
            )
        dsu.union(i, j)
    return _finish_coloring(pattern, colors, k=len(classes))


def _finish_coloring(pattern: SparsityPattern, colors: dict, k: Optional[int] = None) -> Coloring:
    if k is None:
        k = 1 + max(colors.values()) if colors else 0
    n = pattern.n
    seeds = [[0.0] * n for _ in range(k)]
    for v, c in colors.items():
        seeds[c][v] = 1.0

    entry_index = {e: idx for idx, e in enumerate(pattern.entries)}
    plan: list = []
    for (i, j), idx in sorted(entry_index.items(), key=lambda kv: kv[1]):
        if i == j:
            plan.append((idx, i, colors[i], ()))

    # off-diagonals: walk each two-colored tree from its lowest vertex
    pair_edges: dict = {}
    for i, j in pattern.entries:
        if i == j:
            continue
        key = tuple(sorted((colors[i], colors[j])))
        pair_edges.setdefault(key, []).append((i, j))
    for key in sorted(pair_edges):
        tree_adj: dict = {}
        for i, j in pair_edges[key]:
            tree_adj.setdefault(i, []).append(j)
            tree_adj.setdefault(j, []).append(i)
        visited = set()
        for root in sorted(tree_adj):
            if root in visited:
                continue
            # iterative post-order: children edges recovered before parent
            stack = [(root, None, False)]
            post: list = []
            visited.add(root)
            while stack:
                v, parent, expanded = stack.pop()
                if expanded:
                    if parent is not None:
                        post.append((v, parent))
                    continue
                stack.append((v, parent, True))
                for w in sorted(tree_adj[v]):
                    if w != parent and w not in visited:
                        visited.add(w)
                        stack.append((w, v, False))
            for v, parent in post:
                e = (v, parent) if v <= parent else (parent, v)
                subtract = []
                for w in tree_adj[v]:
                    if w != parent:
                        e2 = (v, w) if v <= w else (w, v)
                        subtract.append(entry_index[e2])
                plan.append((entry_index[e], v, colors[parent], tuple(subtract)))
    return Coloring(pattern, colors, k, seeds, plan)


def recover(coloring: Coloring, columns: Sequence[Sequence[float]]) -> list:
    """Hessian entries (aligned with the pattern) from k product columns."""
    if len(columns) != coloring.k:
        raise PlanMismatchError(
            f"expected {coloring.k} product columns, got {len(columns)}"
        )
    n = coloring.pattern.n
    for col in columns:
        if len(col) != n:
            raise PlanMismatchError(
                f"product column has length {len(col)}, expected {n}"
            )
    out = [0.0] * len(coloring.pattern.entries)
    for idx, row, col_c, subtract in coloring.plan:
        val = columns[col_c][row]
        for s in subtract:
            val -= out[s]
        out[idx] = val
    return out


def describe_coloring(coloring: Coloring) -> str:
    """Line-oriented deterministic summary: k, classes, seeds, plan size."""
    lines = [f"colors: {coloring.k}"]
    for c, cls in enumerate(coloring.color_classes()):
        lines.append(f"class {c}: " + " ".join(str(v) for v in cls))
    for c, seed in enumerate(coloring.seeds):
        lines.append(f"seed {c}: " + "".join("1" if s else "0" for s in seed))
    lines.append(f"plan steps: {len(coloring.plan)}")
    return "\n".join(lines)
