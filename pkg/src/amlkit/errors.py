"""Exception types shared across the package."""


class AmlError(Exception):
    """Base class for all amlkit errors."""


class BoundOrderError(AmlError, ValueError):
    """Raised when a variable is declared with lb > ub."""


class OwnershipError(AmlError, ValueError):
    """Raised when an expression references a variable the model does not own."""


class RegistrationError(AmlError, ValueError):
    """Raised on bad user-function registration or an unknown function symbol."""


class EvalDomainError(AmlError, ArithmeticError):
    """Domain violation during graph evaluation (log of a negative, x/0, ...).

    Carries the index of the offending node and, when raised while
    evaluating a constraint, the constraint index.
    """

    def __init__(self, node_index, op, message, constraint_index=None):
        self.node_index = node_index
        self.op = op
        self.message = message
        self.constraint_index = constraint_index
        where = f"node {node_index} ({op})"
        if constraint_index is not None:
            where += f" in constraint {constraint_index}"
        super().__init__(f"{message} at {where}")


class SecondOrderUnsupportedError(AmlError, NotImplementedError):
    """Second derivatives requested through a user-defined function."""


class IterationBudgetError(AmlError, RuntimeError):
    """A user-function body exceeded its dual-arithmetic operation budget.

    Surfaces non-converging iterative bodies (e.g. a Newton loop whose
    guard never trips) instead of hanging.
    """


class PlanMismatchError(AmlError, ValueError):
    """Recovery was handed the wrong number of product columns."""


class SessionStateError(AmlError, RuntimeError):
    """A solver session was asked to do something its state cannot support."""
