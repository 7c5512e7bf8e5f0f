"""Nonlinear expression graphs and the user-function registry.

Graphs are flat parallel arrays in topological order (children always
precede parents), so every derivative sweep is a plain loop over node
indices with a caller-provided workspace. Expressions are assembled
with operator-overloading handles from a GraphBuilder.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

from .dual import DualScalar
from .dual import exp as _dexp, log as _dlog, sqrt as _dsqrt
from .dual import sin as _dsin, cos as _dcos, tan as _dtan, erf as _derf
from .errors import EvalDomainError, RegistrationError
from .model import Model, ParamId, VarId

__all__ = [
    "K_CONST", "K_VAR", "K_PARAM", "K_SUM", "K_PROD", "K_POW",
    "K_NEG", "K_DIV", "K_CALL", "K_USER",
    "ExprGraph", "GraphBuilder", "NodeRef", "UserFunction", "Builtin",
    "BUILTINS", "BUILTIN_IDS",
    "register_function", "eval_graph", "build_graph",
    "set_nl_objective", "add_nl_constraint",
    "exp", "log", "sqrt", "sin", "cos", "tan", "erf", "min2", "max2",
]

K_CONST, K_VAR, K_PARAM, K_SUM, K_PROD, K_POW, K_NEG, K_DIV, K_CALL, K_USER = range(10)

_KIND_NAMES = ("const", "var", "param", "sum", "prod", "pow", "neg", "div", "call", "user")


class Builtin:
    """One scalar builtin: value plus first and second derivative rules.

    For unary entries d1/d2 map a float to a float. For the two-argument
    min/max entries d1 maps (a, b) to a pair of partials and d2 is None
    (second derivatives vanish away from the tie set).
    """

    __slots__ = ("name", "arity", "f", "d1", "d2")

    def __init__(self, name, arity, f, d1, d2):
        self.name = name
        self.arity = arity
        self.f = f
        self.d1 = d1
        self.d2 = d2


def _erf_d1(x):
    return 2.0 / math.sqrt(math.pi) * math.exp(-x * x)


def _sign0(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


BUILTINS = [
    Builtin("abs", 1, abs, _sign0, lambda x: 0.0),
    Builtin("exp", 1, math.exp, math.exp, math.exp),
    Builtin("log", 1, math.log, lambda x: 1.0 / x, lambda x: -1.0 / (x * x)),
    Builtin("sqrt", 1, math.sqrt,
            lambda x: 0.5 / math.sqrt(x),
            lambda x: -0.25 / (x * math.sqrt(x))),
    Builtin("sin", 1, math.sin, math.cos, lambda x: -math.sin(x)),
    Builtin("cos", 1, math.cos, lambda x: -math.sin(x), lambda x: -math.cos(x)),
    Builtin("tan", 1, math.tan,
            lambda x: 1.0 + math.tan(x) ** 2,
            lambda x: 2.0 * math.tan(x) * (1.0 + math.tan(x) ** 2)),
    Builtin("erf", 1, math.erf, _erf_d1, lambda x: -2.0 * x * _erf_d1(x)),
    Builtin("min", 2, lambda a, b: a if a <= b else b,
            lambda a, b: (1.0, 0.0) if a <= b else (0.0, 1.0), None),
    Builtin("max", 2, lambda a, b: a if a >= b else b,
            lambda a, b: (1.0, 0.0) if a >= b else (0.0, 1.0), None),
]

BUILTIN_IDS = {b.name: i for i, b in enumerate(BUILTINS)}


class UserFunction:
    """Registered scalar function: generic body plus derivative source."""

    __slots__ = ("name", "arity", "body", "autodiff", "derivative")

    def __init__(self, name, arity, body, autodiff, derivative):
        self.name = name
        self.arity = arity
        self.body = body
        self.autodiff = autodiff
        self.derivative = derivative

    def partials(self, args: Sequence[float]) -> tuple:
        """First partials at a point, via callback or dual sweeps."""
        if self.derivative is not None:
            out = self.derivative(*args)
            return out if isinstance(out, tuple) else (out,)
        grads = []
        for k in range(self.arity):
            duals = [
                DualScalar(a, 1.0 if i == k else 0.0) for i, a in enumerate(args)
            ]
            res = self.body(*duals)
            grads.append(res.dot if isinstance(res, DualScalar) else 0.0)
        return tuple(grads)


def register_function(
    model: Model,
    name: str,
    arity: int,
    body: Callable,
    autodiff: bool = True,
    derivative: Optional[Callable] = None,
) -> None:
    """Register a scalar function for use in this model's graphs.

    With autodiff=True first derivatives come from running the body on
    dual numbers; otherwise a derivative callback returning the partials
    is required.
    """
    if name in model.functions:
        raise RegistrationError(f"function {name!r} is already registered")
    if arity < 1:
        raise RegistrationError(f"arity must be >= 1, got {arity}")
    if not autodiff and derivative is None:
        raise RegistrationError(
            f"function {name!r} has autodiff=False but no derivative callback"
        )
    model.functions[name] = UserFunction(name, arity, body, autodiff, derivative)
    model.revision += 1


class ExprGraph:
    """Frozen operation graph in topological order.

    Parallel arrays: kind tag, float payload (constant value or pow
    exponent), int ref (variable/parameter index, builtin id, or user
    function name), and a children tuple per node.
    """

    __slots__ = ("kinds", "payloads", "refs", "children", "root", "var_set", "functions")

    def __init__(self, kinds, payloads, refs, children, root, functions):
        self.kinds = kinds
        self.payloads = payloads
        self.refs = refs
        self.children = children
        self.root = root
        self.functions = functions
        vs = set()
        for k, r in zip(kinds, refs):
            if k == K_VAR:
                vs.add(r)
        self.var_set = frozenset(vs)

    def __len__(self):
        return len(self.kinds)

    def node_label(self, i: int) -> str:
        k = self.kinds[i]
        if k == K_CALL:
            return BUILTINS[self.refs[i]].name
        if k == K_USER:
            return f"user:{self.refs[i]}"
        return _KIND_NAMES[k]

    def dump(self) -> str:
        """One node per line: `index: kind(children...)`."""
        lines = []
        for i, k in enumerate(self.kinds):
            if k == K_CONST:
                body = repr(self.payloads[i])
            elif k == K_VAR or k == K_PARAM:
                body = str(self.refs[i])
            elif k == K_POW:
                body = f"{self.children[i][0]}, {self.payloads[i]!r}"
            else:
                body = ", ".join(str(c) for c in self.children[i])
            lines.append(f"{i}: {self.node_label(i)}({body})")
        return "\n".join(lines)


class NodeRef:
    """Handle to one node while building; overloads scalar arithmetic."""

    __slots__ = ("builder", "index")

    def __init__(self, builder: "GraphBuilder", index: int):
        self.builder = builder
        self.index = index

    def _lift(self, other):
        if isinstance(other, NodeRef):
            if other.builder is not self.builder:
                raise ValueError("cannot mix nodes from different builders")
            return other
        if isinstance(other, (int, float)):
            return self.builder.const(float(other))
        return NotImplemented

    def __add__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return NotImplemented
        return self.builder._node(K_SUM, (self.index, o.index))

    __radd__ = __add__

    def __neg__(self):
        return self.builder._node(K_NEG, (self.index,))

    def __abs__(self):
        return self.builder.call("abs", self)

    def __sub__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return NotImplemented
        return self.builder._node(K_SUM, (self.index, (-o).index))

    def __rsub__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return NotImplemented
        return self.builder._node(K_SUM, (o.index, (-self).index))

    def __mul__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return NotImplemented
        return self.builder._node(K_PROD, (self.index, o.index))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return NotImplemented
        return self.builder._node(K_DIV, (self.index, o.index))

    def __rtruediv__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return NotImplemented
        return self.builder._node(K_DIV, (o.index, self.index))

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("pow exponent must be a real number; use exp(e*log(x)) otherwise")
        return self.builder._node(K_POW, (self.index,), payload=float(exponent))


class GraphBuilder:
    """Accumulates nodes; leaves are cached so repeats share one node."""

    def __init__(self, model: Optional[Model] = None):
        self.model = model
        self.kinds: list = []
        self.payloads: list = []
        self.refs: list = []
        self.children: list = []
        self._leaf_cache: dict = {}

    def _append(self, kind, payload, ref, children) -> NodeRef:
        self.kinds.append(kind)
        self.payloads.append(payload)
        self.refs.append(ref)
        self.children.append(children)
        return NodeRef(self, len(self.kinds) - 1)

    def _node(self, kind, children, payload=0.0, ref=-1) -> NodeRef:
        return self._append(kind, payload, ref, tuple(children))

    def const(self, value: float) -> NodeRef:
        key = (K_CONST, float(value))
        if key not in self._leaf_cache:
            self._leaf_cache[key] = self._append(K_CONST, float(value), -1, ())
        return self._leaf_cache[key]

    def var(self, v: VarId) -> NodeRef:
        if self.model is not None and not (0 <= v.index < self.model.num_vars):
            raise ValueError(f"variable index {v.index} out of range")
        key = (K_VAR, v.index)
        if key not in self._leaf_cache:
            self._leaf_cache[key] = self._append(K_VAR, 0.0, v.index, ())
        return self._leaf_cache[key]

    def param(self, p: ParamId) -> NodeRef:
        key = (K_PARAM, p.index)
        if key not in self._leaf_cache:
            self._leaf_cache[key] = self._append(K_PARAM, 0.0, p.index, ())
        return self._leaf_cache[key]

    def sum(self, refs) -> NodeRef:
        idx = tuple(r.index for r in refs)
        if not idx:
            return self.const(0.0)
        return self._node(K_SUM, idx)

    def prod(self, refs) -> NodeRef:
        idx = tuple(r.index for r in refs)
        if not idx:
            return self.const(1.0)
        return self._node(K_PROD, idx)

    def call(self, name: str, *args: NodeRef) -> NodeRef:
        b = BUILTINS[BUILTIN_IDS[name]]
        if len(args) != b.arity:
            raise ValueError(f"{name} takes {b.arity} args, got {len(args)}")
        return self._node(K_CALL, (a.index for a in args), ref=BUILTIN_IDS[name])

    def call_user(self, name: str, *args) -> NodeRef:
        if len(args) == 1 and isinstance(args[0], (list, tuple)):
            args = tuple(args[0])
        if self.model is None or name not in self.model.functions:
            raise RegistrationError(f"unknown function symbol {name!r}")
        fn = self.model.functions[name]
        if len(args) != fn.arity:
            raise RegistrationError(
                f"function {name!r} has arity {fn.arity}, called with {len(args)}"
            )
        node = self._append(K_USER, 0.0, name, tuple(a.index for a in args))
        return node

    def finish(self, root: NodeRef) -> ExprGraph:
        if root.builder is not self:
            raise ValueError("root belongs to a different builder")
        functions = dict(self.model.functions) if self.model is not None else {}
        return ExprGraph(
            list(self.kinds),
            list(self.payloads),
            list(self.refs),
            [tuple(c) for c in self.children],
            root.index,
            functions,
        )


def build_graph(model: Optional[Model], description: Callable) -> ExprGraph:
    """Build a graph from a callback receiving the builder.

    The callback gets the GraphBuilder and returns the root NodeRef,
    e.g. ``build_graph(m, lambda g: exp(g.var(x)**2 + g.var(y)**2))``.
    """
    g = GraphBuilder(model)
    return g.finish(description(g))


def _unary(name):
    def fn(x):
        if isinstance(x, NodeRef):
            return x.builder.call(name, x)
        return _DUAL_FNS[name](x)

    fn.__name__ = name
    fn.__doc__ = f"{name}(x) for graph handles, dual numbers, and floats."
    return fn


_DUAL_FNS = {
    "exp": _dexp, "log": _dlog, "sqrt": _dsqrt,
    "sin": _dsin, "cos": _dcos, "tan": _dtan, "erf": _derf,
}

exp = _unary("exp")
log = _unary("log")
sqrt = _unary("sqrt")
sin = _unary("sin")
cos = _unary("cos")
tan = _unary("tan")
erf = _unary("erf")


def _binary_minmax(name, picker):
    def fn(a, b):
        if isinstance(a, NodeRef) or isinstance(b, NodeRef):
            builder = a.builder if isinstance(a, NodeRef) else b.builder
            a = a if isinstance(a, NodeRef) else builder.const(float(a))
            b = b if isinstance(b, NodeRef) else builder.const(float(b))
            return builder.call(name, a, b)
        return picker(a, b)

    fn.__name__ = name + "2"
    fn.__doc__ = f"Two-argument {name} for graph handles and plain scalars."
    return fn


min2 = _binary_minmax("min", min)
max2 = _binary_minmax("max", max)


def eval_graph(graph: ExprGraph, x: Sequence[float], params: Sequence[float] = (),
               values: Optional[list] = None) -> float:
    """Forward value sweep; returns the root value.

    `values` may be a preallocated workspace of len(graph) reused
    across calls (one workspace per thread).
    """
    n = len(graph.kinds)
    if values is None:
        values = [0.0] * n
    kinds = graph.kinds
    payloads = graph.payloads
    refs = graph.refs
    children = graph.children
    for i in range(n):
        k = kinds[i]
        if k == K_VAR:
            values[i] = x[refs[i]]
        elif k == K_CONST:
            values[i] = payloads[i]
        elif k == K_PARAM:
            values[i] = params[refs[i]]
        elif k == K_SUM:
            values[i] = sum(values[c] for c in children[i])
        elif k == K_PROD:
            acc = 1.0
            for c in children[i]:
                acc *= values[c]
            values[i] = acc
        elif k == K_NEG:
            values[i] = -values[children[i][0]]
        elif k == K_POW:
            base = values[children[i][0]]
            p = payloads[i]
            try:
                values[i] = base ** p
            except (ValueError, ZeroDivisionError, OverflowError) as e:
                raise EvalDomainError(i, "pow", f"{base} ** {p}: {e}") from None
            if isinstance(values[i], complex):
                raise EvalDomainError(i, "pow", f"{base} ** {p} is complex")
        elif k == K_DIV:
            num, den = values[children[i][0]], values[children[i][1]]
            if den == 0.0:
                raise EvalDomainError(i, "div", f"{num} / 0")
            values[i] = num / den
        elif k == K_CALL:
            b = BUILTINS[refs[i]]
            args = [values[c] for c in children[i]]
            try:
                values[i] = b.f(*args)
            except (ValueError, ZeroDivisionError, OverflowError) as e:
                raise EvalDomainError(i, b.name, f"{b.name}({args}): {e}") from None
        else:
            fn = graph.functions[refs[i]]
            args = [values[c] for c in children[i]]
            try:
                res = fn.body(*args)
            except (ValueError, ZeroDivisionError, OverflowError) as e:
                raise EvalDomainError(i, fn.name, f"{fn.name}({args}): {e}") from None
            values[i] = float(res)
    return values[graph.root]


def set_nl_objective(model: Model, sense: str, graph: ExprGraph) -> None:
    if sense not in ("min", "max"):
        raise ValueError(f"objective sense must be 'min' or 'max', got {sense!r}")
    model.objective_sense = sense
    model.nl_objective = graph
    model.revision += 1


def add_nl_constraint(model: Model, graph: ExprGraph, sense: str, rhs: float) -> int:
    if sense not in ("LE", "EQ", "GE", "<=", "==", ">=", "<", "=", ">"):
        raise ValueError(f"unknown constraint sense {sense!r}")
    norm = {"<=": "LE", "<": "LE", "==": "EQ", "=": "EQ", ">=": "GE", ">": "GE"}.get(sense, sense)
    cid = len(model.nl_constraints)
    model.nl_constraints.append((graph, norm, float(rhs)))
    model.revision += 1
    return cid
