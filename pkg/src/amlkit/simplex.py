"""Dense-tableau simplex with incremental row addition.

The session translates a StandardForm into computational form (shift
variables with finite lower bounds, flip upper-bounded-only ones, split
free ones, turn finite ranges into explicit bound rows), runs two-phase
primal simplex, and re-optimizes after appended rows with dual simplex
steps from the surviving basis. Everything lives in one preallocated
numpy tableau so a row append is a write plus a price-out, never a
rebuild.

This is a desk-scale reference oracle (soft cap around n + m <= 5000),
not a sparse production code. Degeneracy is handled by switching to
Bland's rule after 3(n+m) non-improving pivots; an optional seeded
relative objective jitter breaks heavily degenerate ties (reported
objectives always use the true coefficients).
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .errors import SessionStateError
from .model import EQ, GE, LE, MAX, StandardForm, _sense, canonicalize

__all__ = ["SolveResult", "SolverSession", "FEAS_TOL", "PIVOT_TOL"]

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
_RATIO_TIE = 1e-12

_SHIFT, _FLIP, _SPLIT = 0, 1, 2


class SolveResult:
    """Outcome of one solver call."""

    __slots__ = ("status", "objective", "x", "pivots", "cuts", "nodes", "trace")

    def __init__(self, status, objective=None, x=None, pivots=0, cuts=0, nodes=0,
                 trace=None):
        self.status = status
        self.objective = objective
        self.x = list(x) if x is not None else None
        self.pivots = pivots
        self.cuts = cuts
        self.nodes = nodes
        self.trace = trace

    def to_json_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "x": self.x,
            "pivots": self.pivots,
            "cuts": self.cuts,
            "nodes": self.nodes,
        }

    def __repr__(self):
        return f"SolveResult({self.status}, objective={self.objective})"


class SolverSession:
    """One LP loaded into a tableau, with instrumentation counters.

    Counters: `rows_added` incremental row appends, `rebuilds` tableau
    reconstructions after the first build (0 across any add/solve
    sequence), `pivots` total simplex pivots.
    """

    def __init__(
        self,
        form: StandardForm,
        extra_row_capacity: int = 64,
        jitter: float = 0.0,
        jitter_seed: int = 20240601,
        pivot_cap: int = 500_000,
    ):
        if form.qobj:
            raise ValueError("the LP session cannot carry a quadratic objective")
        self.form = form
        self.extra_row_capacity = extra_row_capacity
        self.jitter = jitter
        self.jitter_seed = jitter_seed
        self.pivot_cap = pivot_cap

        self.rows_added = 0
        self.rebuilds = 0
        self.pivots = 0
        self.status: Optional[str] = None

        self._built = False
        self._pending: list = []  # (pairs, sense, rhs) queued before first build
        self._plan_vars()

    # -- variable translation -------------------------------------------

    def _plan_vars(self) -> None:
        f = self.form
        self.modes = []
        self.zcol = []       # first z column per variable
        self.offsets = []    # shift constant per variable
        ncols = 0
        bound_rows = []      # (zcol, range) rows appended as LE
        for j in range(f.num_vars):
            lb, ub = f.lb[j], f.ub[j]
            if lb == -math.inf and ub == math.inf:
                self.modes.append(_SPLIT)
                self.zcol.append(ncols)
                self.offsets.append(0.0)
                ncols += 2
            elif lb == -math.inf:
                self.modes.append(_FLIP)
                self.zcol.append(ncols)
                self.offsets.append(ub)
                ncols += 1
            else:
                self.modes.append(_SHIFT)
                self.zcol.append(ncols)
                self.offsets.append(lb)
                if ub != math.inf:
                    bound_rows.append((ncols, ub - lb))
                ncols += 1
        self.nz = ncols
        self._bound_rows = bound_rows

    def _translate_row(self, pairs, rhs: float):
        """Original-space row -> (dense z coefficients, shifted rhs)."""
        a = np.zeros(self.nz)
        r = float(rhs)
        for j, v in pairs:
            mode = self.modes[j]
            col = self.zcol[j]
            if mode == _SHIFT:
                a[col] += v
                r -= v * self.offsets[j]
            elif mode == _FLIP:
                a[col] -= v
                r -= v * self.offsets[j]
            else:
                a[col] += v
                a[col + 1] -= v
        return a, r

    def _translate_objective(self):
        c = np.zeros(self.nz)
        for j, v in enumerate(self.form.c):
            if v == 0.0:
                continue
            mode = self.modes[j]
            col = self.zcol[j]
            if mode == _SHIFT:
                c[col] += v
            elif mode == _FLIP:
                c[col] -= v
            else:
                c[col] += v
                c[col + 1] -= v
        if self.jitter:
            rng = np.random.default_rng(self.jitter_seed)
            c = c * (1.0 + self.jitter * rng.uniform(1.0, 2.0, size=self.nz))
        return c

    # -- tableau construction --------------------------------------------

    def _build(self) -> None:
        f = self.form
        rows = []  # (z coefficients, sense, rhs)
        by_row: dict = {}
        for r, cidx, v in zip(f.a_rows, f.a_cols, f.a_vals):
            by_row.setdefault(r, []).append((cidx, v))
        for r in range(f.num_rows):
            a, rhs = self._translate_row(by_row.get(r, []), f.b[r])
            rows.append((a, f.senses[r], rhs))
        for col, rng_ in self._bound_rows:
            a = np.zeros(self.nz)
            a[col] = 1.0
            rows.append((a, LE, rng_))
        for pairs, sense, rhs in self._pending:
            a, r2 = self._translate_row(pairs, rhs)
            if sense == GE:
                rows.append((-a, LE, -r2))
            elif sense == EQ:
                rows.append((a, EQ, r2))
            else:
                rows.append((a, LE, r2))
        self._pending = []

        m0 = len(rows)
        extra = self.extra_row_capacity
        row_cap = m0 + 2 * extra + 1
        col_cap = self.nz + 2 * m0 + 2 * extra + 4
        self.T = np.zeros((row_cap + 1, col_cap + 1))
        self.obj_r = row_cap
        self.row_cap = row_cap
        self.col_cap = col_cap
        self.m = 0
        self.ncols = self.nz
        self.basis: list = []
        self.banned = np.zeros(col_cap, dtype=bool)
        T = self.T

        artificial_cols = []
        for a, sense, rhs in rows:
            if rhs < 0.0:
                a, rhs = -a, -rhs
                sense = {LE: GE, GE: LE, EQ: EQ}[sense]
            r = self.m
            T[r, : self.nz] = a
            T[r, -1] = rhs
            if sense == LE:
                T[r, self.ncols] = 1.0
                self.basis.append(self.ncols)
                self.ncols += 1
            else:
                if sense == GE:
                    T[r, self.ncols] = -1.0
                    self.ncols += 1
                T[r, self.ncols] = 1.0
                artificial_cols.append(self.ncols)
                self.basis.append(self.ncols)
                self.ncols += 1
            self.m += 1

        if artificial_cols:
            art = np.array(artificial_cols)
            obj = np.zeros(col_cap)
            # phase-1 objective: sum of artificials, priced out at the start
            for r in range(self.m):
                if self.basis[r] in artificial_cols:
                    obj[: self.ncols] -= T[r, : self.ncols]
                    T[self.obj_r, -1] -= T[r, -1]
            T[self.obj_r, : self.ncols] = obj[: self.ncols]
            T[self.obj_r, art] = 0.0
            status = self._primal()
            if status != "optimal":
                self.status = "infeasible" if status != "iteration_limit" else status
                self._built = True
                return
            if -T[self.obj_r, -1] > FEAS_TOL:
                self.status = "infeasible"
                self._built = True
                return
            self.banned[art] = True
            self._evict_artificials(set(artificial_cols))

        cz = self._translate_objective()
        T[self.obj_r, :] = 0.0
        T[self.obj_r, : self.nz] = cz
        T[self.obj_r, -1] = 0.0
        for r in range(self.m):
            coeff = T[self.obj_r, self.basis[r]]
            if coeff != 0.0:
                T[self.obj_r, : self.ncols] -= coeff * T[r, : self.ncols]
                T[self.obj_r, -1] -= coeff * T[r, -1]
        self._built = True
        self.status = self._primal()

    def _evict_artificials(self, art: set) -> None:
        """Pivot basic artificials out, or drop their (redundant) rows."""
        T = self.T
        r = 0
        while r < self.m:
            if self.basis[r] in art:
                row = T[r, : self.ncols]
                eligible = np.nonzero(
                    (np.abs(row) > PIVOT_TOL) & ~self.banned[: self.ncols]
                )[0]
                if len(eligible):
                    j = int(eligible[np.argmax(np.abs(row[eligible]))])
                    self._pivot(r, j)
                else:
                    last = self.m - 1
                    if r != last:
                        T[r, :] = T[last, :]
                        self.basis[r] = self.basis[last]
                    T[last, :] = 0.0
                    self.basis.pop()
                    self.m -= 1
                    continue
            r += 1

    def _grow(self, need_rows: int = 0, need_cols: int = 0) -> None:
        row_cap = max(self.row_cap, self.m + need_rows) * 2
        col_cap = max(self.col_cap, self.ncols + need_cols) * 2
        T = np.zeros((row_cap + 1, col_cap + 1))
        T[: self.m, : self.ncols] = self.T[: self.m, : self.ncols]
        T[: self.m, -1] = self.T[: self.m, -1]
        T[row_cap, : self.ncols] = self.T[self.obj_r, : self.ncols]
        T[row_cap, -1] = self.T[self.obj_r, -1]
        banned = np.zeros(col_cap, dtype=bool)
        banned[: self.col_cap] = self.banned
        self.T, self.obj_r = T, row_cap
        self.row_cap, self.col_cap = row_cap, col_cap
        self.banned = banned

    # -- pivoting ---------------------------------------------------------

    def _pivot(self, r: int, j: int) -> None:
        T = self.T
        k = self.ncols
        piv = T[r, j]
        T[r, :k] /= piv
        T[r, -1] /= piv
        m = self.m
        col = T[:m, j].copy()
        col[r] = 0.0
        rowv = T[r, :k]
        T[:m, :k] -= col[:, None] * rowv
        T[:m, -1] -= col * T[r, -1]
        co = T[self.obj_r, j]
        if co != 0.0:
            T[self.obj_r, :k] -= co * rowv
            T[self.obj_r, -1] -= co * T[r, -1]
        T[:m, j] = 0.0
        T[self.obj_r, j] = 0.0
        T[r, j] = 1.0
        self.basis[r] = j
        self.pivots += 1

    def _primal(self) -> str:
        """Minimize from a primal-feasible basis; Dantzig then Bland."""
        T = self.T
        stall = 0
        limit = 3 * (self.m + self.nz)
        cap = self.pivot_cap
        while cap > 0:
            cap -= 1
            m = self.m
            obj = T[self.obj_r, : self.ncols].copy()
            obj[self.banned[: self.ncols]] = 0.0
            if stall > limit:
                neg = np.nonzero(obj < -PIVOT_TOL)[0]
                if not len(neg):
                    return "optimal"
                j = int(neg[0])
            else:
                j = int(np.argmin(obj))
                if obj[j] > -PIVOT_TOL:
                    return "optimal"
            col = T[:m, j]
            mask = col > PIVOT_TOL
            if not mask.any():
                return "unbounded"
            ratios = np.full(m, np.inf)
            ratios[mask] = T[:m, -1][mask] / col[mask]
            rmin = ratios.min()
            cand = np.nonzero(ratios <= rmin + _RATIO_TIE)[0]
            if stall > limit:
                r = int(cand[np.argmin([self.basis[i] for i in cand])])
            else:
                r = int(cand[np.argmax(col[cand])])
            prev = T[self.obj_r, -1]
            self._pivot(r, j)
            stall = 0 if T[self.obj_r, -1] > prev + _RATIO_TIE else stall + 1
        return "iteration_limit"

    def _dual(self) -> str:
        """Restore feasibility from a dual-feasible basis after new rows."""
        T = self.T
        stall = 0
        limit = 3 * (self.m + self.nz)
        cap = self.pivot_cap
        while cap > 0:
            cap -= 1
            m = self.m
            rhs = T[:m, -1]
            if stall > limit:
                neg = np.nonzero(rhs < -PIVOT_TOL)[0]
                if not len(neg):
                    return "optimal"
                r = int(neg[np.argmin([self.basis[i] for i in neg])])
            else:
                r = int(np.argmin(rhs))
                if rhs[r] > -PIVOT_TOL:
                    return "optimal"
            row = T[r, : self.ncols].copy()
            row[self.banned[: self.ncols]] = 0.0
            mask = row < -PIVOT_TOL
            if not mask.any():
                return "infeasible"
            obj = T[self.obj_r, : self.ncols]
            ratios = np.full(self.ncols, np.inf)
            ratios[mask] = obj[mask] / (-row[mask])
            rmin = ratios.min()
            cand = np.nonzero(ratios <= rmin + _RATIO_TIE)[0]
            if stall > limit:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(-row[cand])])
            prev = T[self.obj_r, -1]
            self._pivot(r, j)
            stall = 0 if T[self.obj_r, -1] < prev - _RATIO_TIE else stall + 1
        return "iteration_limit"

    # -- public surface ----------------------------------------------------

    def solve(self) -> SolveResult:
        """Initial solve (two-phase primal). Idempotent once optimal."""
        before = self.pivots
        if not self._built:
            self._build()
        elif self.status == "optimal":
            pass
        else:
            self.status = self._primal()
        return self._result(before)

    def add_row(self, pairs: Sequence, sense: str, rhs: float) -> None:
        """Append one original-space row; basis untouched, no rebuild.

        Before the first solve the row joins the initial build set.
        Afterwards it lands in the tableau with a fresh basic slack and
        is priced out against the current basis. An equality arrives as
        the two opposing inequalities.
        """
        sense = _sense(sense)
        self.rows_added += 1
        if not self._built:
            self._pending.append((list(pairs), sense, rhs))
            return
        a, r2 = self._translate_row(pairs, rhs)
        if sense == GE:
            self._append_le(-a, -r2)
        elif sense == EQ:
            self._append_le(a, r2)
            self._append_le(-a, -r2)
        else:
            self._append_le(a, r2)

    def _append_le(self, a, rhs: float) -> None:
        if self.m + 1 >= self.row_cap or self.ncols + 1 >= self.col_cap:
            self._grow(need_rows=1, need_cols=1)
        T = self.T
        r = self.m
        T[r, : self.nz] = a
        T[r, self.ncols] = 1.0
        T[r, -1] = rhs
        self.basis.append(self.ncols)
        self.ncols += 1
        self.m += 1
        coefs = T[r, self.basis[:r]].copy()
        nz = np.nonzero(np.abs(coefs) > 1e-14)[0]
        if len(nz):
            T[r, : self.ncols] -= coefs[nz] @ T[nz, : self.ncols]
            T[r, -1] -= coefs[nz] @ T[nz, -1]

    def resolve(self) -> SolveResult:
        """Dual-simplex re-optimization from the surviving basis."""
        before = self.pivots
        if not self._built:
            self._build()
        else:
            status = self._dual()
            self.status = status
        return self._result(before)

    def current_point(self) -> list:
        """Tableau solution mapped back to original variable space."""
        if not self._built:
            raise SessionStateError("no solve has produced a point yet")
        z = np.zeros(self.ncols)
        T = self.T
        for r, j in enumerate(self.basis):
            z[j] = T[r, -1]
        x = []
        for j in range(self.form.num_vars):
            mode, col, off = self.modes[j], self.zcol[j], self.offsets[j]
            if mode == _SHIFT:
                x.append(float(z[col]) + off)
            elif mode == _FLIP:
                x.append(off - float(z[col]))
            else:
                x.append(float(z[col] - z[col + 1]))
        return x

    def push_constraint(self, con) -> None:
        """Model.add_constraint hook: push a scalar affine row."""
        body = canonicalize(con.body)
        if body.quad_terms:
            raise SessionStateError(
                "cannot push a quadratic row into an LP session"
            )
        pairs = [(v.index, coeff) for coeff, v in body.affine.terms]
        self.add_row(pairs, con.sense, con.rhs - body.affine.constant)

    def _result(self, pivots_before: int) -> SolveResult:
        spent = self.pivots - pivots_before
        if self.status == "optimal":
            x = self.current_point()
            return SolveResult("optimal", self.form.objective_value(x), x, spent)
        return SolveResult(self.status, None, None, spent)
