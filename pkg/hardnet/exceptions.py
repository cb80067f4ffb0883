from typing import Any, Dict, Optional, Sequence
import logging

logger = logging.getLogger(__name__)

class HardNetException(Exception):
    """Base exception with structured error details"""

    def __init__(
        self,
        detail: str,
        error_code: Optional[str] = None,
        error_type: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None
    ):
        super().__init__(detail)
        self.detail = detail
        self.error_code = error_code
        self.error_type = error_type
        self.context = context or {}

class ShapeMismatchException(HardNetException):
    """Operand shapes incompatible with an operation"""

    def __init__(
        self,
        op: str,
        shapes: Sequence[Any],
        detail: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None
    ):
        shapes = [tuple(s) for s in shapes]
        if not detail:
            detail = f"Shape mismatch in '{op}': {', '.join(str(s) for s in shapes)}"
        super().__init__(
            detail=detail,
            error_code="SHAPE_MISMATCH",
            error_type="shape",
            context={
                "op": op,
                "shapes": shapes,
                **(context or {})
            }
        )

class NonFiniteException(HardNetException):
    """NaN or Inf entries where finite values are required"""

    def __init__(self, where: str, count: int = 0):
        super().__init__(
            detail=f"Non-finite values in {where}",
            error_code="NON_FINITE",
            error_type="numeric",
            context={"where": where, "count": count}
        )

class ConfigurationException(HardNetException):
    """Invalid configuration or argument values"""

    def __init__(
        self,
        detail: str,
        field: Optional[str] = None,
        value: Optional[Any] = None,
        context: Optional[Dict[str, Any]] = None
    ):
        super().__init__(
            detail=detail,
            error_code="INVALID_CONFIGURATION",
            error_type="configuration",
            context={
                "field": field,
                "value": value,
                **(context or {})
            }
        )

class AssumptionViolationException(HardNetException):
    """Constraint set does not satisfy the assumptions a layer relies on"""

    def __init__(
        self,
        detail: str,
        error_code: str = "ASSUMPTION_VIOLATED",
        x: Optional[Any] = None,
        context: Optional[Dict[str, Any]] = None
    ):
        super().__init__(
            detail=detail,
            error_code=error_code,
            error_type="assumption",
            context={
                "x": _as_list(x),
                **(context or {})
            }
        )

class SingularBlockException(AssumptionViolationException):
    def __init__(self, condition_number: float, x: Optional[Any] = None):
        super().__init__(
            detail=f"Equality block C1 is singular (condition number {condition_number:.3e})",
            error_code="SINGULAR_EQUALITY_BLOCK",
            x=x,
            context={"condition_number": condition_number}
        )

class RankDeficientException(AssumptionViolationException):
    def __init__(self, what: str, x: Optional[Any] = None, min_singular_value: Optional[float] = None):
        super().__init__(
            detail=f"{what} is not full row rank",
            error_code="RANK_DEFICIENT",
            x=x,
            context={"matrix": what, "min_singular_value": min_singular_value}
        )

class InfeasibleConstraintException(AssumptionViolationException):
    def __init__(self, detail: str = "Constraint set is empty", x: Optional[Any] = None,
                 residual: Optional[float] = None):
        super().__init__(
            detail=detail,
            error_code="INFEASIBLE_CONSTRAINTS",
            x=x,
            context={"residual": residual}
        )

class DegenerateConstraintException(AssumptionViolationException):
    def __init__(self, detail: str, x: Optional[Any] = None, norm: Optional[float] = None):
        super().__init__(
            detail=detail,
            error_code="DEGENERATE_CONSTRAINT",
            x=x,
            context={"norm": norm}
        )

class SolverConvergenceException(HardNetException):
    """Iterative solver stopped before reaching its tolerance"""

    def __init__(
        self,
        solver: str,
        iterations: int,
        residual: float,
        best_iterate: Optional[Any] = None
    ):
        super().__init__(
            detail=f"{solver} did not converge after {iterations} iterations (residual {residual:.3e})",
            error_code="SOLVER_NOT_CONVERGED",
            error_type="solver",
            context={
                "solver": solver,
                "iterations": iterations,
                "residual": residual,
                "best_iterate": _as_list(best_iterate)
            }
        )
        self.best_iterate = best_iterate
        self.residual = residual

class CheckpointFormatException(HardNetException):
    def __init__(self, detail: str, path: Optional[str] = None):
        super().__init__(
            detail=detail,
            error_code="CHECKPOINT_FORMAT",
            error_type="io",
            context={"path": path}
        )

def _as_list(value: Any) -> Any:
    """Make numpy payloads JSON friendly"""
    if value is None:
        return None
    tolist = getattr(value, "tolist", None)
    return tolist() if tolist else value
