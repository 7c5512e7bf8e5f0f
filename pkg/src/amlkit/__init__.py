"""amlkit: desk-scale algebraic modeling with exact derivatives.

Build optimization models variable by variable, extract sparse
standard forms, differentiate nonlinear expression graphs (gradients,
Hessian-vector products, colored sparse Hessians), and solve small
LP / cutting-plane / branch-and-bound instances.
"""

from .errors import (
    AmlError,
    BoundOrderError,
    EvalDomainError,
    IterationBudgetError,
    OwnershipError,
    PlanMismatchError,
    RegistrationError,
    SecondOrderUnsupportedError,
    SessionStateError,
)
from .model import (
    EQ,
    GE,
    LE,
    MAX,
    MIN,
    AffExpr,
    Constraint,
    Model,
    QuadExpr,
    StandardForm,
    VarId,
    canonicalize,
    expr_sum,
    to_standard_form,
)

__version__ = "0.1.0"

__all__ = [
    "AmlError", "BoundOrderError", "EvalDomainError", "IterationBudgetError",
    "OwnershipError", "PlanMismatchError", "RegistrationError",
    "SecondOrderUnsupportedError", "SessionStateError",
    "LE", "EQ", "GE", "MIN", "MAX",
    "AffExpr", "Constraint", "Model", "QuadExpr", "StandardForm", "VarId",
    "canonicalize", "expr_sum", "to_standard_form",
    "__version__",
]
