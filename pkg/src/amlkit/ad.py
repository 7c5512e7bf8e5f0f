"""Derivative oracles over expression graphs.

Gradients come from one reverse sweep, directional derivatives from a
dual-number forward sweep, and Hessian-vector products from running the
reverse sweep in dual arithmetic (forward-over-reverse). NlpEvaluator
packages a whole model behind the callback surface an NLP solver
expects: values, gradient, sparse Jacobian, and a colored sparse
Hessian of the Lagrangian.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

from . import coloring as _coloring
from .dual import DualScalar, operation_budget
from .errors import EvalDomainError, SecondOrderUnsupportedError
from .model import AffExpr, Model, QuadExpr, canonicalize
from .nlexpr import (
    BUILTINS,
    ExprGraph,
    GraphBuilder,
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
    eval_graph,
)

__all__ = [
    "ReverseWorkspace",
    "NlpEvaluator",
    "gradient",
    "forward_dual",
    "hessian_vector_product",
]


class ReverseWorkspace:
    """Per-caller scratch arrays sized to one graph's node count."""

    __slots__ = ("size", "values", "adjoints", "dots", "adjoint_dots")

    def __init__(self, graph_or_size: Union[ExprGraph, int]):
        size = graph_or_size if isinstance(graph_or_size, int) else len(graph_or_size)
        self.size = size
        self.values = [0.0] * size
        self.adjoints = [0.0] * size
        self.dots = [0.0] * size
        self.adjoint_dots = [0.0] * size


def _workspace_for(graph: ExprGraph, workspace: Optional[ReverseWorkspace]) -> ReverseWorkspace:
    if workspace is None:
        return ReverseWorkspace(graph)
    if workspace.size != len(graph):
        raise ValueError(
            f"workspace sized for {workspace.size} nodes, graph has {len(graph)}"
        )
    return workspace


def _pow_d1(v: float, p: float, node: int) -> float:
    if v == 0.0 and p < 1.0 and p != 0.0:
        raise EvalDomainError(node, "pow", f"derivative of x**{p} at 0")
    try:
        return p * v ** (p - 1.0)
    except (ValueError, ZeroDivisionError, OverflowError) as e:
        raise EvalDomainError(node, "pow", f"derivative of x**{p} at {v}: {e}") from None


def _pow_d2(v: float, p: float, node: int) -> float:
    if p in (0.0, 1.0):
        return 0.0
    if v == 0.0 and p < 2.0:
        raise EvalDomainError(node, "pow", f"second derivative of x**{p} at 0")
    try:
        return p * (p - 1.0) * v ** (p - 2.0)
    except (ValueError, ZeroDivisionError, OverflowError) as e:
        raise EvalDomainError(node, "pow", f"second derivative of x**{p} at {v}: {e}") from None


def _call_d1(b, args, node: int):
    try:
        out = b.d1(*args)
    except (ValueError, ZeroDivisionError, OverflowError) as e:
        raise EvalDomainError(node, b.name, f"derivative of {b.name} at {args}: {e}") from None
    return out if b.arity == 2 else (out,)


def gradient(
    graph: ExprGraph,
    x: Sequence[float],
    params: Sequence[float] = (),
    workspace: Optional[ReverseWorkspace] = None,
) -> list:
    """Exact gradient of the root with respect to x, one reverse pass."""
    ws = _workspace_for(graph, workspace)
    eval_graph(graph, x, params, ws.values)
    kinds, payloads, refs, children = graph.kinds, graph.payloads, graph.refs, graph.children
    values = ws.values
    adj = ws.adjoints
    for i in range(len(kinds)):
        adj[i] = 0.0
    adj[graph.root] = 1.0
    grad = [0.0] * len(x)
    for i in range(len(kinds) - 1, -1, -1):
        a = adj[i]
        if a == 0.0:
            continue
        k = kinds[i]
        if k == K_VAR:
            grad[refs[i]] += a
        elif k == K_SUM:
            for c in children[i]:
                adj[c] += a
        elif k == K_PROD:
            cs = children[i]
            if len(cs) == 2:
                c0, c1 = cs
                adj[c0] += a * values[c1]
                adj[c1] += a * values[c0]
            else:
                m = len(cs)
                suffix = [1.0] * (m + 1)
                for t in range(m - 1, -1, -1):
                    suffix[t] = suffix[t + 1] * values[cs[t]]
                prefix = 1.0
                for t in range(m):
                    adj[cs[t]] += a * prefix * suffix[t + 1]
                    prefix *= values[cs[t]]
        elif k == K_NEG:
            adj[children[i][0]] -= a
        elif k == K_POW:
            c = children[i][0]
            adj[c] += a * _pow_d1(values[c], payloads[i], i)
        elif k == K_DIV:
            cn, cd = children[i]
            vd = values[cd]
            adj[cn] += a / vd
            adj[cd] -= a * values[cn] / (vd * vd)
        elif k == K_CALL:
            b = BUILTINS[refs[i]]
            cs = children[i]
            partials = _call_d1(b, [values[c] for c in cs], i)
            for c, p in zip(cs, partials):
                adj[c] += a * p
        elif k == K_USER:
            fn = graph.functions[refs[i]]
            cs = children[i]
            args = [values[c] for c in cs]
            with operation_budget():
                partials = fn.partials(args)
            for c, p in zip(cs, partials):
                adj[c] += a * p
    return grad


def _dual_sweep(graph, x, d, params, val, dot):
    """Forward sweep carrying (value, directional derivative) per node."""
    kinds, payloads, refs, children = graph.kinds, graph.payloads, graph.refs, graph.children
    for i in range(len(kinds)):
        k = kinds[i]
        if k == K_VAR:
            val[i] = x[refs[i]]
            dot[i] = d[refs[i]]
        elif k == K_CONST:
            val[i] = payloads[i]
            dot[i] = 0.0
        elif k == K_PARAM:
            val[i] = params[refs[i]]
            dot[i] = 0.0
        elif k == K_SUM:
            sv = sd = 0.0
            for c in children[i]:
                sv += val[c]
                sd += dot[c]
            val[i] = sv
            dot[i] = sd
        elif k == K_PROD:
            pv, pd = 1.0, 0.0
            for c in children[i]:
                pv, pd = pv * val[c], pd * val[c] + pv * dot[c]
            val[i] = pv
            dot[i] = pd
        elif k == K_NEG:
            c = children[i][0]
            val[i] = -val[c]
            dot[i] = -dot[c]
        elif k == K_POW:
            c = children[i][0]
            p = payloads[i]
            base = val[c]
            try:
                val[i] = base ** p
            except (ValueError, ZeroDivisionError, OverflowError) as e:
                raise EvalDomainError(i, "pow", f"{base} ** {p}: {e}") from None
            dot[i] = (_pow_d1(base, p, i) * dot[c]) if dot[c] != 0.0 else 0.0
        elif k == K_DIV:
            cn, cd = children[i]
            vd = val[cd]
            if vd == 0.0:
                raise EvalDomainError(i, "div", f"{val[cn]} / 0")
            val[i] = val[cn] / vd
            dot[i] = dot[cn] / vd - val[i] * dot[cd] / vd
        elif k == K_CALL:
            b = BUILTINS[refs[i]]
            cs = children[i]
            args = [val[c] for c in cs]
            try:
                val[i] = b.f(*args)
            except (ValueError, ZeroDivisionError, OverflowError) as e:
                raise EvalDomainError(i, b.name, f"{b.name}({args}): {e}") from None
            partials = _call_d1(b, args, i)
            dot[i] = sum(p * dot[c] for c, p in zip(cs, partials))
        else:
            fn = graph.functions[refs[i]]
            cs = children[i]
            duals = [DualScalar(val[c], dot[c]) for c in cs]
            with operation_budget():
                try:
                    res = fn.body(*duals)
                except (ValueError, ZeroDivisionError, OverflowError) as e:
                    raise EvalDomainError(i, fn.name, f"{fn.name}: {e}") from None
            if isinstance(res, DualScalar):
                val[i], dot[i] = res.val, res.dot
            else:
                val[i], dot[i] = float(res), 0.0


def forward_dual(
    target: Union[ExprGraph, Callable],
    x,
    d,
    params: Sequence[float] = (),
) -> tuple:
    """(value, gradient(x)^T d) by dual-number propagation.

    `target` is an expression graph, or any callable generic over its
    scalar arguments (a registered user-function body, say); callables
    get scalar or sequence x and matching seed d.
    """
    if isinstance(target, ExprGraph):
        n = len(target)
        val = [0.0] * n
        dot = [0.0] * n
        _dual_sweep(target, x, d, params, val, dot)
        return val[target.root], dot[target.root]
    if isinstance(x, (int, float)):
        args = [DualScalar(float(x), float(d))]
    else:
        if len(d) != len(x):
            raise ValueError("seed direction length must match point length")
        args = [DualScalar(float(a), float(b)) for a, b in zip(x, d)]
    with operation_budget():
        res = target(*args)
    if isinstance(res, DualScalar):
        return res.val, res.dot
    return float(res), 0.0


def hessian_vector_product(
    graph: ExprGraph,
    x: Sequence[float],
    d: Sequence[float],
    params: Sequence[float] = (),
    workspace: Optional[ReverseWorkspace] = None,
) -> list:
    """Exact Hessian-vector product: the reverse sweep run on duals.

    The forward sweep carries directional derivatives; the reverse
    sweep then propagates adjoints with a dual channel whose epsilon
    part is the Hessian action on d.
    """
    ws = _workspace_for(graph, workspace)
    val, dot = ws.values, ws.dots
    _dual_sweep(graph, x, d, params, val, dot)
    kinds, payloads, refs, children = graph.kinds, graph.payloads, graph.refs, graph.children
    av, ad = ws.adjoints, ws.adjoint_dots
    for i in range(len(kinds)):
        av[i] = 0.0
        ad[i] = 0.0
    av[graph.root] = 1.0
    out = [0.0] * len(x)
    for i in range(len(kinds) - 1, -1, -1):
        a, a_dot = av[i], ad[i]
        if a == 0.0 and a_dot == 0.0:
            continue
        k = kinds[i]
        if k == K_VAR:
            out[refs[i]] += a_dot
        elif k == K_SUM:
            for c in children[i]:
                av[c] += a
                ad[c] += a_dot
        elif k == K_NEG:
            c = children[i][0]
            av[c] -= a
            ad[c] -= a_dot
        elif k == K_PROD:
            cs = children[i]
            if len(cs) == 2:
                c0, c1 = cs
                av[c0] += a * val[c1]
                ad[c0] += a_dot * val[c1] + a * dot[c1]
                av[c1] += a * val[c0]
                ad[c1] += a_dot * val[c0] + a * dot[c0]
            else:
                m = len(cs)
                suf_v = [1.0] * (m + 1)
                suf_d = [0.0] * (m + 1)
                for t in range(m - 1, -1, -1):
                    c = cs[t]
                    suf_v[t] = suf_v[t + 1] * val[c]
                    suf_d[t] = suf_d[t + 1] * val[c] + suf_v[t + 1] * dot[c]
                pre_v, pre_d = 1.0, 0.0
                for t in range(m):
                    c = cs[t]
                    pv = pre_v * suf_v[t + 1]
                    pd = pre_d * suf_v[t + 1] + pre_v * suf_d[t + 1]
                    av[c] += a * pv
                    ad[c] += a_dot * pv + a * pd
                    pre_v, pre_d = pre_v * val[c], pre_d * val[c] + pre_v * dot[c]
        elif k == K_POW:
            c = children[i][0]
            p = payloads[i]
            pv = _pow_d1(val[c], p, i)
            pd = (_pow_d2(val[c], p, i) * dot[c]) if dot[c] != 0.0 else 0.0
            av[c] += a * pv
            ad[c] += a_dot * pv + a * pd
        elif k == K_DIV:
            cn, cd = children[i]
            vd = val[cd]
            inv = 1.0 / vd
            pv_n = inv
            pd_n = -dot[cd] * inv * inv
            av[cn] += a * pv_n
            ad[cn] += a_dot * pv_n + a * pd_n
            pv_d = -val[cn] * inv * inv
            pd_d = (-dot[cn] + 2.0 * val[cn] * dot[cd] * inv) * inv * inv
            av[cd] += a * pv_d
            ad[cd] += a_dot * pv_d + a * pd_d
        elif k == K_CALL:
            b = BUILTINS[refs[i]]
            cs = children[i]
            args = [val[c] for c in cs]
            partials = _call_d1(b, args, i)
            if b.arity == 1:
                c = cs[0]
                pd = (b.d2(args[0]) * dot[c]) if b.d2 is not None else 0.0
                av[c] += a * partials[0]
                ad[c] += a_dot * partials[0] + a * pd
            else:
                for c, p in zip(cs, partials):
                    av[c] += a * p
                    ad[c] += a_dot * p
        elif k == K_USER:
            raise SecondOrderUnsupportedError(
                f"user function {refs[i]!r} has no second-order rule; "
                "Hessian-vector products cannot pass through it"
            )
    return out


def _quad_to_graph(expr: Union[QuadExpr, AffExpr], model: Model) -> ExprGraph:
    """Lower a (canonicalized) quadratic expression to a graph."""
    expr = canonicalize(expr)
    if isinstance(expr, AffExpr):
        expr = QuadExpr(None, expr)
    g = GraphBuilder(model)
    parts = []
    for c, v1, v2 in expr.quad_terms:
        if v1 == v2:
            parts.append(g.const(c) * g.var(v1) ** 2 if c != 1.0 else g.var(v1) ** 2)
        else:
            node = g.var(v1) * g.var(v2)
            parts.append(g.const(c) * node if c != 1.0 else node)
    for c, v in expr.affine.terms:
        parts.append(g.const(c) * g.var(v) if c != 1.0 else g.var(v))
    if expr.affine.constant != 0.0 or not parts:
        parts.append(g.const(expr.affine.constant))
    return g.finish(g.sum(parts) if len(parts) > 1 else parts[0])


def _merge_graphs(graphs: Sequence[ExprGraph]):
    """Concatenate node arrays, remapping children; returns arrays + roots."""
    kinds: list = []
    payloads: list = []
    refs: list = []
    children: list = []
    functions: dict = {}
    roots = []
    for g in graphs:
        off = len(kinds)
        kinds.extend(g.kinds)
        payloads.extend(g.payloads)
        refs.extend(g.refs)
        children.extend(tuple(c + off for c in cs) for cs in g.children)
        functions.update(g.functions)
        roots.append(g.root + off)
    return kinds, payloads, refs, children, functions, roots


class NlpEvaluator:
    """Immutable derivative oracle for one model (the Eq-style contract is
    minimize f with g(x) <= 0 rows and h(x) = 0 rows).

    Scalar model constraints are lowered to graphs; `>=` rows are
    negated into `<=` form, and right-hand sides fold into the
    constraint value. Jacobian rows stack the inequality block above
    the equality block. The Lagrangian Hessian sigma*H(f) + sum
    lambda_i*H(c_i) is evaluated through one shared weighted-sum graph
    whose weights are parameters, so sparsity and coloring are computed
    once per model.
    """

    def __init__(self, model: Model):
        self.n = model.num_vars
        self.params = model.params
        self._base_params = len(model.params)
        self.sense = model.objective_sense

        if model.nl_objective is not None:
            self.f_graph = model.nl_objective
        else:
            self.f_graph = _quad_to_graph(model.objective, model)

        ineq: list = []  # (graph, scale, shift): value = scale*raw + shift
        eq: list = []
        for con in model.constraints:
            if con.is_cone:
                raise ValueError(
                    "cone constraints have no NLP-evaluator form; "
                    "use the cutting-plane driver instead"
                )
            graph = _quad_to_graph(con.body, model)
            if con.sense == "LE":
                ineq.append((graph, 1.0, -con.rhs))
            elif con.sense == "GE":
                ineq.append((graph, -1.0, con.rhs))
            else:
                eq.append((graph, 1.0, -con.rhs))
        for graph, sense, rhs in model.nl_constraints:
            if sense == "LE":
                ineq.append((graph, 1.0, -rhs))
            elif sense == "GE":
                ineq.append((graph, -1.0, rhs))
            else:
                eq.append((graph, 1.0, -rhs))
        self.g_rows = ineq
        self.h_rows = eq
        self.m_g = len(ineq)
        self.m_h = len(eq)

        self._jac_sparsity = []
        for row, (graph, _, _) in enumerate(ineq + eq):
            for v in sorted(graph.var_set):
                self._jac_sparsity.append((row, v))
        self._jac_sparsity.sort()

        self._lagrangian = self._build_lagrangian()
        self.hess_pattern = _coloring.detect_sparsity([self._lagrangian], n=self.n)
        self.hess_coloring = _coloring.color(self.hess_pattern)

    @classmethod
    def from_model(cls, model: Model) -> "NlpEvaluator":
        return cls(model)

    def _build_lagrangian(self) -> ExprGraph:
        rows = [self.f_graph] + [g for g, _, _ in self.g_rows + self.h_rows]
        kinds, payloads, refs, children, functions, roots = _merge_graphs(rows)
        scales = [1.0] + [s for _, s, _ in self.g_rows + self.h_rows]
        terms = []
        for i, (root, scale) in enumerate(zip(roots, scales)):
            pidx = self._base_params + i  # param i is sigma, then lambda_1..m
            kinds.append(K_PARAM)
            payloads.append(0.0)
            refs.append(pidx)
            children.append(())
            weight = len(kinds) - 1
            prod_children = [weight, root]
            if scale != 1.0:
                kinds.append(K_CONST)
                payloads.append(scale)
                refs.append(-1)
                children.append(())
                prod_children.append(len(kinds) - 1)
            kinds.append(K_PROD)
            payloads.append(0.0)
            refs.append(-1)
            children.append(tuple(prod_children))
            terms.append(len(kinds) - 1)
        kinds.append(K_SUM)
        payloads.append(0.0)
        refs.append(-1)
        children.append(tuple(terms))
        return ExprGraph(kinds, payloads, refs, children, len(kinds) - 1, functions)

    # -- callback surface ------------------------------------------------

    def dims(self) -> tuple:
        return self.n, self.m_g, self.m_h

    def jacobian_sparsity(self) -> list:
        return list(self._jac_sparsity)

    def hessian_sparsity(self) -> list:
        return list(self.hess_pattern.entries)

    def eval_objective(self, x) -> float:
        return eval_graph(self.f_graph, x, self.params)

    def eval_constraints(self, x) -> tuple:
        g_vals = []
        h_vals = []
        for row, (graph, scale, shift) in enumerate(self.g_rows + self.h_rows):
            try:
                raw = eval_graph(graph, x, self.params)
            except EvalDomainError as e:
                raise EvalDomainError(e.node_index, e.op, e.message, constraint_index=row) from None
            (g_vals if row < self.m_g else h_vals).append(scale * raw + shift)
        return g_vals, h_vals

    def eval_grad_objective(self, x, workspace=None) -> list:
        return gradient(self.f_graph, x, self.params, workspace)

    def eval_jacobian(self, x) -> list:
        out = []
        pos = 0
        sp = self._jac_sparsity
        by_row: dict = {}
        for row, colv in sp:
            by_row.setdefault(row, []).append(colv)
        grads: dict = {}
        for row, (graph, scale, _) in enumerate(self.g_rows + self.h_rows):
            if row not in by_row:
                continue
            try:
                grad = gradient(graph, x, self.params)
            except EvalDomainError as e:
                raise EvalDomainError(e.node_index, e.op, e.message, constraint_index=row) from None
            grads[row] = (grad, scale)
        for row, colv in sp:
            grad, scale = grads[row]
            out.append(scale * grad[colv])
            pos += 1
        return out

    def eval_hessian_lagrangian(self, x, sigma: float, lam: Sequence[float]) -> list:
        """Entries aligned with hessian_sparsity(), via colored products."""
        m = self.m_g + self.m_h
        if len(lam) != m:
            raise ValueError(f"expected {m} multipliers, got {len(lam)}")
        params = list(self.params) + [float(sigma)] + [float(v) for v in lam]
        ws = ReverseWorkspace(self._lagrangian)
        columns = []
        for seed in self.hess_coloring.seeds:
            columns.append(
                hessian_vector_product(self._lagrangian, x, seed, params, ws)
            )
        return _coloring.recover(self.hess_coloring, columns)
