"""Model registry, expression accumulation, and standard-form extraction.

Expressions are flat term lists that tolerate duplicates while building
(appends are O(1)); `canonicalize` sorts, merges, and drops zeros in one
pass. `to_standard_form` turns a model into the sparse arrays a solver
consumes: dense c, triplet A/Qobj, senses, bounds, lifted cones, and the
integer set.
"""

from __future__ import annotations

import json
import math
from typing import Iterable, NamedTuple, Optional, Sequence

from .errors import BoundOrderError, OwnershipError, SessionStateError

__all__ = [
    "LE",
    "EQ",
    "GE",
    "MIN",
    "MAX",
    "VarId",
    "ParamId",
    "AffExpr",
    "QuadExpr",
    "Constraint",
    "Model",
    "StandardForm",
    "canonicalize",
    "expr_sum",
    "to_standard_form",
]

LE, EQ, GE = "LE", "EQ", "GE"
MIN, MAX = "min", "max"

_SENSE_ALIASES = {
    "LE": LE, "<=": LE, "<": LE,
    "EQ": EQ, "==": EQ, "=": EQ,
    "GE": GE, ">=": GE, ">": GE,
}


def _sense(s: str) -> str:
    try:
        return _SENSE_ALIASES[s.upper() if s.isalpha() else s]
    except KeyError:
        raise ValueError(f"unknown constraint sense {s!r}") from None


class VarId(NamedTuple):
    index: int


class ParamId(NamedTuple):
    index: int


class AffExpr:
    """Affine expression: sum of (coeff, var) terms plus a constant."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms=None, constant: float = 0.0):
        self.terms: list = list(terms) if terms else []
        self.constant = float(constant)

    def add_term(self, coeff: float, var: VarId) -> None:
        self.terms.append((coeff, var))

    def copy(self) -> "AffExpr":
        return AffExpr(self.terms, self.constant)

    def evaluate(self, x: Sequence[float]) -> float:
        return self.constant + sum(c * x[v.index] for c, v in self.terms)

    def __repr__(self):
        return f"AffExpr({len(self.terms)} terms, constant={self.constant})"


class QuadExpr:
    """Quadratic expression: quad term list over an AffExpr.

    Quadratic coefficients are stored exactly as written (no implicit
    1/2); any scaling a consumer wants is applied at export.
    """

    __slots__ = ("quad_terms", "affine", "_storage_allocs")

    def __init__(self, quad_terms=None, affine: Optional[AffExpr] = None):
        self.quad_terms: list = list(quad_terms) if quad_terms else []
        self.affine = affine if affine is not None else AffExpr()
        self._storage_allocs = 1

    def add_term(self, coeff: float, v1: VarId, v2: Optional[VarId] = None) -> None:
        """Append one term: quadratic when v2 is given, else linear."""
        if v2 is None:
            self.affine.terms.append((coeff, v1))
        else:
            self.quad_terms.append((coeff, v1, v2))

    def add_constant(self, value: float) -> None:
        self.affine.constant += value

    def evaluate(self, x: Sequence[float]) -> float:
        total = self.affine.evaluate(x)
        for c, v1, v2 in self.quad_terms:
            total += c * x[v1.index] * x[v2.index]
        return total

    def __repr__(self):
        return (
            f"QuadExpr({len(self.quad_terms)} quad terms, "
            f"{len(self.affine.terms)} linear terms, "
            f"constant={self.affine.constant})"
        )


def expr_sum(terms: Iterable, size_hint: int = 0) -> QuadExpr:
    """Accumulate generated terms into a QuadExpr.

    Each generated item may be a real constant, a (coeff, var) pair, a
    (coeff, var1, var2) triple, or another AffExpr/QuadExpr to splice
    in. The staging buffer is grown with explicit capacity doubling so
    allocations are countable: an exact size_hint gives one staging
    allocation plus one final materialization, recorded in the result's
    `_storage_allocs`.
    """
    if size_hint < 0:
        raise ValueError("size_hint must be >= 0")
    staging: list = [None] * max(size_hint, 1)
    allocs = 1
    fill = 0
    for item in terms:
        if fill == len(staging):
            grown = [None] * (2 * len(staging))
            grown[:fill] = staging
            staging = grown
            allocs += 1
        staging[fill] = item
        fill += 1

    constant = 0.0
    spliced = []
    nquad = nlin = 0
    for k in range(fill):
        item = staging[k]
        if isinstance(item, tuple):
            if len(item) == 2:
                nlin += 1
            elif len(item) == 3:
                nquad += 1
            else:
                raise ValueError(f"bad term tuple of length {len(item)}")
        elif isinstance(item, (int, float)):
            constant += item
        elif isinstance(item, (AffExpr, QuadExpr)):
            spliced.append(item)
        else:
            raise TypeError(f"cannot sum term of type {type(item).__name__}")
    quad = [None] * nquad
    lin = [None] * nlin
    allocs += 1
    qi = li = 0
    for k in range(fill):
        item = staging[k]
        if isinstance(item, tuple):
            if len(item) == 2:
                lin[li] = item
                li += 1
            else:
                quad[qi] = item
                qi += 1
    out = QuadExpr(None, AffExpr(None, constant))
    out.quad_terms = quad
    out.affine.terms = lin
    for other in spliced:
        if isinstance(other, AffExpr):
            out.affine.terms.extend(other.terms)
            out.affine.constant += other.constant
        else:
            out.quad_terms.extend(other.quad_terms)
            out.affine.terms.extend(other.affine.terms)
            out.affine.constant += other.affine.constant
    out._storage_allocs = allocs
    return out


def canonicalize(expr) -> "QuadExpr | AffExpr":
    """Return a sorted, merged, zero-free copy of an expression."""
    if isinstance(expr, AffExpr):
        return AffExpr(_merge_linear(expr.terms), expr.constant)
    merged_q: dict = {}
    for c, v1, v2 in expr.quad_terms:
        key = (v1, v2) if v1 <= v2 else (v2, v1)
        merged_q[key] = merged_q.get(key, 0.0) + c
    quad = [
        (c, v1, v2)
        for (v1, v2), c in sorted(merged_q.items())
        if c != 0.0
    ]
    return QuadExpr(quad, AffExpr(_merge_linear(expr.affine.terms), expr.affine.constant))


def _merge_linear(terms):
    merged: dict = {}
    for c, v in terms:
        merged[v] = merged.get(v, 0.0) + c
    return [(c, v) for v, c in sorted(merged.items()) if c != 0.0]


class Constraint:
    """Scalar row (body sense rhs) or a second-order cone ||x||_2 <= t."""

    __slots__ = ("body", "sense", "rhs", "cone_t", "cone_x")

    def __init__(self, body=None, sense=None, rhs=None, cone_t=None, cone_x=None):
        scalar = body is not None
        cone = cone_t is not None or cone_x is not None
        if scalar == cone:
            raise ValueError("constraint must be exactly one of scalar or cone form")
        if scalar:
            if isinstance(body, AffExpr):
                body = QuadExpr(None, body.copy())
            self.body = body
            self.sense = _sense(sense)
            self.rhs = float(rhs)
            self.cone_t = self.cone_x = None
        else:
            if cone_t is None or cone_x is None:
                raise ValueError("cone form needs both t and x")
            self.body = self.sense = self.rhs = None
            self.cone_t = cone_t
            self.cone_x = list(cone_x)

    @property
    def is_cone(self) -> bool:
        return self.cone_t is not None

    @classmethod
    def scalar(cls, body, sense, rhs) -> "Constraint":
        return cls(body=body, sense=sense, rhs=rhs)

    @classmethod
    def cone(cls, t: AffExpr, x: Sequence[AffExpr]) -> "Constraint":
        return cls(cone_t=t, cone_x=x)


class Model:
    """Mutable registry of variables, bounds, constraints, and objective."""

    def __init__(self):
        self.num_vars = 0
        self.lb: list = []
        self.ub: list = []
        self.is_integer: list = []
        self.constraints: list = []
        self.objective = QuadExpr()
        self.objective_sense = MIN
        self.nl_objective = None        # ExprGraph, set via nlexpr
        self.nl_constraints: list = []  # (ExprGraph, sense, rhs)
        self.params: list = []          # parameter values, ParamId indexed
        self.functions: dict = {}       # name -> UserFunction
        self.revision = 0
        self._session = None

    # -- building ------------------------------------------------------

    def add_variable(
        self,
        lb: float = -math.inf,
        ub: float = math.inf,
        integer: bool = False,
    ) -> VarId:
        if lb > ub:
            raise BoundOrderError(f"lb {lb} > ub {ub}")
        vid = VarId(self.num_vars)
        self.num_vars += 1
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.is_integer.append(bool(integer))
        self.revision += 1
        return vid

    def add_parameter(self, value: float) -> ParamId:
        pid = ParamId(len(self.params))
        self.params.append(float(value))
        self.revision += 1
        return pid

    def set_parameter(self, pid: ParamId, value: float) -> None:
        self.params[pid.index] = float(value)

    def _check_owned(self, expr) -> None:
        if isinstance(expr, AffExpr):
            terms = ((v,) for _, v in expr.terms)
        else:
            terms = [(v,) for _, v in expr.affine.terms]
            terms += [(v1, v2) for _, v1, v2 in expr.quad_terms]
        for vs in terms:
            for v in vs:
                if not (0 <= v.index < self.num_vars):
                    raise OwnershipError(
                        f"variable index {v.index} is not owned by this model "
                        f"({self.num_vars} variables)"
                    )

    def add_constraint(self, con: Constraint) -> int:
        if not isinstance(con, Constraint):
            raise TypeError("add_constraint expects a Constraint")
        if con.is_cone:
            self._check_owned(con.cone_t)
            for e in con.cone_x:
                self._check_owned(e)
        else:
            self._check_owned(con.body)
        cid = len(self.constraints)
        self.constraints.append(con)
        self.revision += 1
        if self._session is not None:
            if con.is_cone:
                raise SessionStateError(
                    "cannot push a cone constraint into an attached session"
                )
            self._session.push_constraint(con)
        return cid

    def add_linear_constraint(self, terms, sense, rhs) -> int:
        """Convenience: terms is a list of (coeff, VarId)."""
        return self.add_constraint(Constraint.scalar(AffExpr(terms), sense, rhs))

    def set_objective(self, sense: str, expr) -> None:
        if sense not in (MIN, MAX):
            raise ValueError(f"objective sense must be 'min' or 'max', got {sense!r}")
        if isinstance(expr, AffExpr):
            expr = QuadExpr(None, expr.copy())
        self._check_owned(expr)
        if self._session is not None:
            raise SessionStateError("cannot change the objective with a session attached")
        self.objective_sense = sense
        self.objective = expr
        self.revision += 1

    # -- solver session hooks (module solve) ----------------------------

    def attach_session(self, session) -> None:
        self._session = session

    def detach_session(self) -> None:
        self._session = None


class StandardForm:
    """Immutable sparse standard form extracted from a model.

    All rows are `sum_j A[i,j] x_j  sense_i  b_i`; the objective is
    always a minimization (a max model is negated at extraction and
    `origin_sense` remembers which way to report). `obj_constant` is
    carried for value reporting but is not part of the JSON dump schema.
    """

    __slots__ = (
        "num_vars", "c", "qobj", "a_rows", "a_cols", "a_vals", "b",
        "senses", "lb", "ub", "cones", "integers", "obj_constant",
        "origin_sense",
    )

    def __init__(self, num_vars, c, qobj, a_rows, a_cols, a_vals, b, senses,
                 lb, ub, cones, integers, obj_constant=0.0, origin_sense=MIN):
        self.num_vars = num_vars
        self.c = list(c)
        self.qobj = list(qobj)
        self.a_rows = list(a_rows)
        self.a_cols = list(a_cols)
        self.a_vals = list(a_vals)
        self.b = list(b)
        self.senses = list(senses)
        self.lb = list(lb)
        self.ub = list(ub)
        self.cones = [(t, list(xs)) for t, xs in cones]
        self.integers = sorted(integers)
        self.obj_constant = float(obj_constant)
        self.origin_sense = origin_sense

    @property
    def num_rows(self) -> int:
        return len(self.b)

    def qobj_triplets(self, scaling: str = "direct"):
        """Qobj triplets; scaling='half' divides off-diagonals consistent
        with a (1/2) x^T Q x consumer convention (Q symmetric, both
        halves implied)."""
        if scaling == "direct":
            return list(self.qobj)
        if scaling == "half":
            out = []
            for i, j, v in self.qobj:
                out.append((i, j, 2.0 * v if i == j else v))
            return out
        raise ValueError(f"unknown scaling {scaling!r}")

    # -- evaluation helpers (round-trip checks, feasibility) ------------

    def row_values(self, x) -> list:
        vals = [0.0] * self.num_rows
        for r, c_, v in zip(self.a_rows, self.a_cols, self.a_vals):
            vals[r] += v * x[c_]
        return vals

    def objective_value(self, x) -> float:
        """Objective in the original model's sense."""
        val = self.obj_constant + sum(ci * x[i] for i, ci in enumerate(self.c))
        for i, j, v in self.qobj:
            val += v * x[i] * x[j]
        return -val if self.origin_sense == MAX else val

    # -- JSON ------------------------------------------------------------

    def to_json_dict(self) -> dict:
        def enc(v):
            if v == math.inf:
                return "inf"
            if v == -math.inf:
                return "-inf"
            return v

        return {
            "num_vars": self.num_vars,
            "c": list(self.c),
            "qobj": {
                "rows": [i for i, _, _ in self.qobj],
                "cols": [j for _, j, _ in self.qobj],
                "vals": [v for _, _, v in self.qobj],
            },
            "A": {
                "rows": list(self.a_rows),
                "cols": list(self.a_cols),
                "vals": list(self.a_vals),
            },
            "b": list(self.b),
            "senses": list(self.senses),
            "lb": [enc(v) for v in self.lb],
            "ub": [enc(v) for v in self.ub],
            "cones": [{"t": t, "x": list(xs)} for t, xs in self.cones],
            "integers": list(self.integers),
        }

    def dump_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=1)

    @classmethod
    def from_json_dict(cls, d: dict) -> "StandardForm":
        def dec(v):
            if v == "inf":
                return math.inf
            if v == "-inf":
                return -math.inf
            return float(v)

        qobj = list(zip(d["qobj"]["rows"], d["qobj"]["cols"], d["qobj"]["vals"]))
        return cls(
            num_vars=d["num_vars"],
            c=d["c"],
            qobj=qobj,
            a_rows=d["A"]["rows"],
            a_cols=d["A"]["cols"],
            a_vals=d["A"]["vals"],
            b=d["b"],
            senses=d["senses"],
            lb=[dec(v) for v in d["lb"]],
            ub=[dec(v) for v in d["ub"]],
            cones=[(c_["t"], list(c_["x"])) for c_ in d["cones"]],
            integers=d["integers"],
        )


def _is_plain_var(expr: AffExpr):
    if expr.constant == 0.0 and len(expr.terms) == 1:
        c, v = expr.terms[0]
        if c == 1.0:
            return v
    return None


def to_standard_form(model: Model) -> StandardForm:
    """Extract sparse standard-form data from a model.

    Scalar rows keep their constraint-id order; each cone is lifted so
    it references plain variables, appending auxiliary variables and
    linking equality rows after the scalar rows. Maximization is
    normalized by negating the objective.
    """
    obj = canonicalize(model.objective)
    flip = -1.0 if model.objective_sense == MAX else 1.0
    c = [0.0] * model.num_vars
    for coeff, v in obj.affine.terms:
        c[v.index] = flip * coeff
    qobj = [(v1.index, v2.index, flip * coeff) for coeff, v1, v2 in obj.quad_terms]
    obj_constant = flip * obj.affine.constant

    a_rows: list = []
    a_cols: list = []
    a_vals: list = []
    b: list = []
    senses: list = []
    lb = list(model.lb)
    ub = list(model.ub)
    cones: list = []
    aux_count = 0
    cone_links: list = []  # (aff_expr, aux_index) equality rows added at the end

    for con in model.constraints:
        if con.is_cone:
            continue
        body = canonicalize(con.body)
        if body.quad_terms:
            raise NotImplementedError(
                "quadratic constraint rows are not extractable to standard form"
            )
        row = len(b)
        for coeff, v in body.affine.terms:
            a_rows.append(row)
            a_cols.append(v.index)
            a_vals.append(coeff)
        b.append(con.rhs - body.affine.constant)
        senses.append(con.sense)

    def lift(expr: AffExpr, nonneg: bool) -> int:
        nonlocal aux_count
        plain = _is_plain_var(expr)
        if plain is not None:
            return plain.index
        idx = model.num_vars + aux_count
        aux_count += 1
        lb.append(0.0 if nonneg else -math.inf)
        ub.append(math.inf)
        cone_links.append((expr, idx))
        return idx

    for con in model.constraints:
        if not con.is_cone:
            continue
        t_idx = lift(canonicalize(con.cone_t), nonneg=True)
        x_idx = [lift(canonicalize(e), nonneg=False) for e in con.cone_x]
        cones.append((t_idx, x_idx))

    for expr, aux in cone_links:
        row = len(b)
        a_rows.append(row)
        a_cols.append(aux)
        a_vals.append(1.0)
        for coeff, v in expr.terms:
            a_rows.append(row)
            a_cols.append(v.index)
            a_vals.append(-coeff)
        b.append(expr.constant)
        senses.append(EQ)

    integers = [i for i, flag in enumerate(model.is_integer) if flag]
    return StandardForm(
        num_vars=model.num_vars + aux_count,
        c=c + [0.0] * aux_count,
        qobj=qobj,
        a_rows=a_rows,
        a_cols=a_cols,
        a_vals=a_vals,
        b=b,
        senses=senses,
        lb=lb,
        ub=ub,
        cones=cones,
        integers=integers,
        obj_constant=obj_constant,
        origin_sense=model.objective_sense,
    )
