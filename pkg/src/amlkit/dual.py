"""Dual-number scalars: a + b*eps with eps^2 = 0.

Evaluating a function body on DualScalar inputs propagates exact first
derivatives through arbitrary host-language control flow, which is how
user-registered functions (including iterative ones like Newton loops)
are differentiated. The generic math helpers below accept plain floats
or DualScalar so the same body runs on either scalar type.
"""

from __future__ import annotations

import math
import threading

from .errors import IterationBudgetError

__all__ = [
    "DualScalar",
    "operation_budget",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "tan",
    "erf",
]

# Operation budget for user-function bodies. Armed only around dual
# evaluations of registered functions; a body whose loop never converges
# trips the budget instead of hanging the process.
_state = threading.local()

DEFAULT_OP_BUDGET = 1_000_000


class operation_budget:
    """Context manager arming the dual-op budget for user bodies."""

    def __init__(self, limit: int = DEFAULT_OP_BUDGET):
        self.limit = limit

    def __enter__(self):
        _state.remaining = self.limit
        return self

    def __exit__(self, *exc):
        _state.remaining = None
        return False


def _charge():
    rem = getattr(_state, "remaining", None)
    if rem is not None:
        if rem <= 0:
            _state.remaining = None
            raise IterationBudgetError(
                "user-function body exceeded its operation budget "
                "(non-converging loop?)"
            )
        _state.remaining = rem - 1


class DualScalar:
    __slots__ = ("val", "dot")

    def __init__(self, val: float, dot: float = 0.0):
        self.val = float(val)
        self.dot = float(dot)

    def __repr__(self):
        return f"DualScalar({self.val!r}, {self.dot!r})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        _charge()
        if isinstance(other, DualScalar):
            return DualScalar(self.val + other.val, self.dot + other.dot)
        return DualScalar(self.val + other, self.dot)

    __radd__ = __add__

    def __sub__(self, other):
        _charge()
        if isinstance(other, DualScalar):
            return DualScalar(self.val - other.val, self.dot - other.dot)
        return DualScalar(self.val - other, self.dot)

    def __rsub__(self, other):
        _charge()
        return DualScalar(other - self.val, -self.dot)

    def __mul__(self, other):
        _charge()
        if isinstance(other, DualScalar):
            return DualScalar(
                self.val * other.val,
                self.val * other.dot + self.dot * other.val,
            )
        return DualScalar(self.val * other, self.dot * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        _charge()
        if isinstance(other, DualScalar):
            v = self.val / other.val
            return DualScalar(v, (self.dot - v * other.dot) / other.val)
        return DualScalar(self.val / other, self.dot / other)

    def __rtruediv__(self, other):
        _charge()
        v = other / self.val
        return DualScalar(v, -v * self.dot / self.val)

    def __pow__(self, p):
        _charge()
        if isinstance(p, DualScalar):
            # x^y with both sides dual: x^y * (y' ln x + y x'/x)
            v = self.val ** p.val
            return DualScalar(
                v, v * (p.dot * math.log(self.val) + p.val * self.dot / self.val)
            )
        v = self.val ** p
        if p == 0:
            return DualScalar(v, 0.0)
        return DualScalar(v, p * self.val ** (p - 1) * self.dot)

    def __rpow__(self, base):
        _charge()
        v = base ** self.val
        return DualScalar(v, v * math.log(base) * self.dot)

    def __neg__(self):
        _charge()
        return DualScalar(-self.val, -self.dot)

    def __pos__(self):
        return self

    def __abs__(self):
        # subgradient 0 at the kink
        _charge()
        if self.val > 0:
            return DualScalar(self.val, self.dot)
        if self.val < 0:
            return DualScalar(-self.val, -self.dot)
        return DualScalar(0.0, 0.0)

    # -- comparisons act on the value part so host control flow works --

    def _other_val(self, other):
        return other.val if isinstance(other, DualScalar) else other

    def __lt__(self, other):
        return self.val < self._other_val(other)

    def __le__(self, other):
        return self.val <= self._other_val(other)

    def __gt__(self, other):
        return self.val > self._other_val(other)

    def __ge__(self, other):
        return self.val >= self._other_val(other)

    def __eq__(self, other):
        return self.val == self._other_val(other)

    def __ne__(self, other):
        return self.val != self._other_val(other)

    def __hash__(self):
        return hash((self.val, self.dot))

    def __float__(self):
        return self.val


# -- generic math functions (float or DualScalar) ----------------------


def exp(x):
    if isinstance(x, DualScalar):
        _charge()
        v = math.exp(x.val)
        return DualScalar(v, v * x.dot)
    return math.exp(x)


def log(x):
    if isinstance(x, DualScalar):
        _charge()
        return DualScalar(math.log(x.val), x.dot / x.val)
    return math.log(x)


def sqrt(x):
    if isinstance(x, DualScalar):
        _charge()
        v = math.sqrt(x.val)
        return DualScalar(v, 0.5 * x.dot / v)
    return math.sqrt(x)


def sin(x):
    if isinstance(x, DualScalar):
        _charge()
        return DualScalar(math.sin(x.val), math.cos(x.val) * x.dot)
    return math.sin(x)


def cos(x):
    if isinstance(x, DualScalar):
        _charge()
        return DualScalar(math.cos(x.val), -math.sin(x.val) * x.dot)
    return math.cos(x)


def tan(x):
    if isinstance(x, DualScalar):
        _charge()
        v = math.tan(x.val)
        return DualScalar(v, (1.0 + v * v) * x.dot)
    return math.tan(x)


def erf(x):
    if isinstance(x, DualScalar):
        _charge()
        d = 2.0 / math.sqrt(math.pi) * math.exp(-x.val * x.val)
        return DualScalar(math.erf(x.val), d * x.dot)
    return math.erf(x)
