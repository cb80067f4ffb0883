"""
Input-dependent affine constraint sets A(x) y <= b(x), C(x) y = d(x).

The equality block is eliminated by solving for the first n_eq output
coordinates (after an optional column permutation), which leaves an
inequality-only system A_tilde z2 <= b_tilde on the remaining coordinates.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence
import logging

import numpy as np
from scipy import linalg

from config import settings
from logging_config import solver_logger
from .exceptions import (
    AssumptionViolationException,
    ConfigurationException,
    HardNetException,
    InfeasibleConstraintException,
    NonFiniteException,
    RankDeficientException,
    ShapeMismatchException,
    SingularBlockException
)

logger = logging.getLogger(__name__)

def _as_2d(value) -> np.ndarray:
    arr = np.asarray(value if value is not None else [], dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 1 and arr.size:
        return arr.reshape(1, -1)
    return np.zeros((0, 0))

def _as_1d(value) -> np.ndarray:
    return np.asarray(value if value is not None else [], dtype=np.float64).ravel()

@dataclass(frozen=True)
class ConstraintEval:
    """Constraint matrices at one input x; b and d are 1-D"""

    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        b, d = _as_1d(self.b), _as_1d(self.d)
        A, C = _as_2d(self.A), _as_2d(self.C)
        # an empty block takes its width from the other one
        if A.shape[0] == 0:
            A = np.zeros((0, C.shape[1]))
        if C.shape[0] == 0:
            C = np.zeros((0, A.shape[1]))

        if A.shape[0] != b.size or C.shape[0] != d.size or A.shape[1] != C.shape[1]:
            raise ShapeMismatchException("constraint_eval", [A.shape, b.shape, C.shape, d.shape])
        for name, arr in (("A", A), ("b", b), ("C", C), ("d", d)):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteException(f"constraint {name}", count=int((~np.isfinite(arr)).sum()))

        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @classmethod
    def create(cls, n_out: int, A=None, b=None, C=None, d=None) -> "ConstraintEval":
        """Build with empty blocks where A/b or C/d are omitted"""
        A = np.zeros((0, n_out)) if A is None else np.asarray(A, dtype=np.float64).reshape(-1, n_out)
        C = np.zeros((0, n_out)) if C is None else np.asarray(C, dtype=np.float64).reshape(-1, n_out)
        return cls(A, _as_1d(b), C, _as_1d(d))

    @property
    def n_out(self) -> int:
        return self.A.shape[1]

    @property
    def n_ineq(self) -> int:
        return self.A.shape[0]

    @property
    def n_eq(self) -> int:
        return self.C.shape[0]

    def permuted(self, permutation: Optional[Sequence[int]]) -> "ConstraintEval":
        if permutation is None:
            return self
        perm = np.asarray(permutation, dtype=int)
        return ConstraintEval(self.A[:, perm], self.b, self.C[:, perm], self.d)

@dataclass
class AffineConstraintSpec:
    evaluator: Callable[[Any], ConstraintEval]
    n_out: int
    n_ineq: int
    n_eq: int
    permutation: Optional[List[int]] = None
    # Only b(x), d(x) depend on x
    matrices_constant: bool = False
    # Evaluators may drop flagged rows, so fewer than n_ineq rows can come back
    variable_ineq: bool = False
    name: str = "constraints"

    def __post_init__(self):
        if self.permutation is not None and sorted(self.permutation) != list(range(self.n_out)):
            raise ConfigurationException(
                f"Permutation must reorder all {self.n_out} output columns",
                field="permutation",
                value=list(self.permutation)
            )

    def evaluate(self, x) -> ConstraintEval:
        ev = self.evaluator(x)
        rows_ok = ev.n_ineq <= self.n_ineq if self.variable_ineq else ev.n_ineq == self.n_ineq
        if ev.n_out != self.n_out or ev.n_eq != self.n_eq or not rows_ok:
            raise ShapeMismatchException(
                f"{self.name}.evaluate",
                [(self.n_ineq, self.n_eq, self.n_out), (ev.n_ineq, ev.n_eq, ev.n_out)],
                detail=f"Constraint evaluator for '{self.name}' returned the wrong block sizes"
            )
        return ev

@dataclass
class ReducedConstraints:
    A_tilde: np.ndarray
    b_tilde: np.ndarray
    C1_inv: np.ndarray
    C2: np.ndarray
    A_tilde_pinv: Optional[np.ndarray]
    A1_C1_inv: np.ndarray
    permutation: Optional[np.ndarray] = None

    @property
    def n_eq(self) -> int:
        return self.C1_inv.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.A_tilde.shape[0]

    @property
    def n_reduced(self) -> int:
        return self.C2.shape[1]

    @property
    def n_out(self) -> int:
        return self.n_eq + self.n_reduced

    def with_rhs(self, b: np.ndarray, d: np.ndarray) -> "ReducedConstraints":
        """Same matrices, new right-hand sides (constant-matrix specs)"""
        return ReducedConstraints(
            self.A_tilde, reduced_rhs(self, b, d), self.C1_inv, self.C2,
            self.A_tilde_pinv, self.A1_C1_inv, self.permutation
        )

def _invertibility_tol(tol: Optional[float]) -> float:
    return settings.invertibility_tol if tol is None else tol

def _is_well_conditioned(s: np.ndarray, tol: float) -> bool:
    return s.size > 0 and s.max() > 0 and s.min() > tol * s.max()

def pseudoinverse(M: np.ndarray, tol: Optional[float] = None, jitter: Optional[float] = None) -> np.ndarray:
    """Right inverse M^T (M M^T)^-1 of a full-row-rank matrix via Cholesky"""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    r, c = M.shape
    if r == 0:
        return np.zeros((c, 0))
    if r > c:
        raise RankDeficientException("matrix with more rows than columns", min_singular_value=0.0)
    s = linalg.svdvals(M)
    if not _is_well_conditioned(s, _invertibility_tol(tol)):
        raise RankDeficientException("M M^T", min_singular_value=float(s.min()))

    gram = M @ M.T
    try:
        factor = linalg.cho_factor(gram)
    except linalg.LinAlgError:
        jitter = settings.cholesky_jitter if jitter is None else jitter
        solver_logger.log_fallback("pseudoinverse", "Cholesky failed, retrying with jitter", jitter=jitter)
        try:
            factor = linalg.cho_factor(gram + jitter * np.eye(r))
        except linalg.LinAlgError:
            raise RankDeficientException("M M^T", min_singular_value=float(s.min()))
    return linalg.cho_solve(factor, M).T

def reduced_rhs(red: ReducedConstraints, b: np.ndarray, d: np.ndarray) -> np.ndarray:
    """b_tilde = b - A1 C1^-1 d; b and d may carry one column per sample"""
    b = np.asarray(b, dtype=np.float64)
    if red.n_eq == 0:
        return b.copy()
    return b - red.A1_C1_inv @ np.asarray(d, dtype=np.float64)

def reduce(ev: ConstraintEval, permutation: Optional[Sequence[int]] = None,
           tol: Optional[float] = None, with_pinv: bool = True) -> ReducedConstraints:
    """Eliminate equalities: A_tilde = A2 - A1 C1^-1 C2, b_tilde = b - A1 C1^-1 d

    with_pinv=False skips the pseudoinverse (and its rank requirement) for callers
    that only need the equality completion.
    """
    tol = _invertibility_tol(tol)
    evp = ev.permuted(permutation)
    n_eq, n_out = evp.n_eq, evp.n_out
    A1, A2 = evp.A[:, :n_eq], evp.A[:, n_eq:]
    C1, C2 = evp.C[:, :n_eq], evp.C[:, n_eq:]

    if n_eq:
        s = linalg.svdvals(C1)
        if not _is_well_conditioned(s, tol):
            cond = float(s.max() / s.min()) if s.min() > 0 else float("inf")
            raise SingularBlockException(cond)
        C1_inv = linalg.solve(C1, np.eye(n_eq))
    else:
        C1_inv = np.zeros((0, 0))

    A1_C1_inv = A1 @ C1_inv
    A_tilde = A2 - A1_C1_inv @ C2
    b_tilde = evp.b - A1_C1_inv @ evp.d
    pinv = None
    if with_pinv:
        if evp.n_ineq > n_out - n_eq:
            raise RankDeficientException("A_tilde (more inequalities than reduced outputs)", min_singular_value=0.0)
        pinv = pseudoinverse(A_tilde, tol=tol)

    perm = None if permutation is None else np.asarray(permutation, dtype=int)
    return ReducedConstraints(A_tilde, b_tilde, C1_inv, C2, pinv, A1_C1_inv, perm)

def unpermute(y_perm: np.ndarray, permutation: Optional[np.ndarray]) -> np.ndarray:
    """Map rows from permuted to original output order"""
    if permutation is None:
        return y_perm
    y = np.empty_like(y_perm)
    y[permutation] = y_perm
    return y

def split_output(y: np.ndarray, red: ReducedConstraints):
    """(eliminated part, reduced part) of a full output in permuted order"""
    y = np.asarray(y, dtype=np.float64)
    y_perm = y if red.permutation is None else y[red.permutation]
    return y_perm[:red.n_eq], y_perm[red.n_eq:]

def lift(partial: np.ndarray, red: ReducedConstraints, d: np.ndarray) -> np.ndarray:
    """Equality completion [C1^-1 (d - C2 z2); z2] in the original column order"""
    partial = np.asarray(partial, dtype=np.float64)
    if red.n_eq == 0:
        y_perm = partial.copy()
    else:
        d = np.asarray(d, dtype=np.float64)
        if partial.ndim == 2 and d.ndim == 1:
            d = d[:, None]
        y_perm = np.concatenate([red.C1_inv @ (d - red.C2 @ partial), partial], axis=0)
    return unpermute(y_perm, red.permutation)

def lift_vjp(red: ReducedConstraints, grad_y: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the lifted output back to the reduced part"""
    g = grad_y if red.permutation is None else grad_y[red.permutation]
    if red.n_eq == 0:
        return g.copy()
    return g[red.n_eq:] - red.C2.T @ (red.C1_inv.T @ g[:red.n_eq])

def suggest_permutation(C: np.ndarray, tol: Optional[float] = None) -> Optional[List[int]]:
    """Greedy column pivoting for an invertible leading n_eq block; None if none found"""
    tol = _invertibility_tol(tol)
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    n_eq, n_out = C.shape
    chosen: List[int] = []
    for _ in range(n_eq):
        best, best_score = None, -1.0
        for j in range(n_out):
            if j in chosen:
                continue
            s = linalg.svdvals(C[:, chosen + [j]])
            score = float(s.min())
            if score > best_score:
                best, best_score = j, score
        chosen.append(best)
    if not _is_well_conditioned(linalg.svdvals(C[:, chosen]), tol):
        return None
    return chosen + [j for j in range(n_out) if j not in chosen]

@dataclass
class ProbeFailure:
    x: Any
    error_code: str
    detail: str

@dataclass
class AssumptionReport:
    spec_name: str
    n_probes: int
    failures: List[ProbeFailure] = field(default_factory=list)
    suggested_permutation: Optional[List[int]] = None
    witnesses: List[np.ndarray] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> List[str]:
        lines = [
            f"spec={self.spec_name}",
            f"probes={self.n_probes}",
            f"passed={self.passed}",
            f"failures={len(self.failures)}"
        ]
        if self.suggested_permutation is not None:
            lines.append(f"suggested_permutation={self.suggested_permutation}")
        for f in self.failures[:10]:
            lines.append(f"failure {f.error_code} at x={np.round(np.asarray(f.x, dtype=float), 6).tolist()}: {f.detail}")
        return lines

    def raise_for_failure(self):
        if self.passed:
            return
        first = self.failures[0]
        if first.error_code == "INFEASIBLE_CONSTRAINTS":
            raise InfeasibleConstraintException(first.detail, x=first.x)
        if first.error_code == "RANK_DEFICIENT":
            raise RankDeficientException(first.detail, x=first.x)
        raise AssumptionViolationException(
            first.detail,
            error_code=first.error_code,
            x=first.x,
            context={"failures": len(self.failures), "suggested_permutation": self.suggested_permutation}
        )

def _feasibility_witness(ev: ConstraintEval) -> np.ndarray:
    from .hardnet_cvx import Polyhedron, kkt_enumeration_oracle, project_cvx

    origin = np.zeros(ev.n_out)
    if ev.n_ineq <= settings.oracle_max_ineq:
        return kkt_enumeration_oracle(origin, ev.A, ev.b, ev.C, ev.d).z
    return project_cvx(origin, Polyhedron(ev.A, ev.b, ev.C, ev.d)).z

def check_assumption1(spec: AffineConstraintSpec, probe_points: Sequence[Any],
                      tol: Optional[float] = None) -> AssumptionReport:
    """Check invertible C1, full-row-rank A_tilde and nonemptiness at every probe point"""
    tol = _invertibility_tol(tol)
    probes = list(probe_points)
    report = AssumptionReport(spec.name, len(probes))

    if spec.n_ineq + spec.n_eq > spec.n_out and not spec.variable_ineq:
        report.failures.append(ProbeFailure(
            None, "RANK_DEFICIENT",
            f"{spec.n_ineq} inequalities + {spec.n_eq} equalities exceed {spec.n_out} outputs"
        ))
        solver_logger.log_assumption_report(False, len(probes), 1)
        return report

    for x in probes:
        ev = spec.evaluate(x)
        evp = ev.permuted(spec.permutation)
        if ev.n_eq:
            s = linalg.svdvals(evp.C[:, :ev.n_eq])
            if not _is_well_conditioned(s, tol):
                suggestion = suggest_permutation(ev.C, tol)
                if suggestion is not None and report.suggested_permutation is None:
                    report.suggested_permutation = suggestion
                report.failures.append(ProbeFailure(
                    x, "SINGULAR_EQUALITY_BLOCK",
                    "Leading equality block is singular"
                    + (f"; permutation {suggestion} makes it invertible" if suggestion else "")
                ))
                continue
        try:
            reduce(ev, spec.permutation, tol)
        except HardNetException as e:
            report.failures.append(ProbeFailure(x, e.error_code or "ASSUMPTION_VIOLATED", e.detail))
            continue
        try:
            report.witnesses.append(_feasibility_witness(ev))
        except HardNetException as e:
            report.failures.append(ProbeFailure(x, "INFEASIBLE_CONSTRAINTS", e.detail))

    solver_logger.log_assumption_report(report.passed, len(probes), len(report.failures))
    return report

@dataclass
class ViolationMetrics:
    """ineq_count counts every positive ReLU(Ay - b) entry; ineq_count_tol only those above ineq_tol"""
    ineq_max: float = 0.0
    ineq_mean: float = 0.0
    ineq_count: int = 0
    eq_max: float = 0.0
    eq_mean: float = 0.0
    eq_count: int = 0
    ineq_count_tol: int = 0

    def reported(self):
        """The six values written to metrics.csv; counts are taken at the tolerances"""
        return (self.ineq_max, self.ineq_mean, self.ineq_count_tol, self.eq_max, self.eq_mean, self.eq_count)

def violation_metrics(y, ev: ConstraintEval, eq_tol: Optional[float] = None,
                      ineq_tol: Optional[float] = None) -> ViolationMetrics:
    """Max, mean and count of ReLU(Ay - b) and |Cy - d|"""
    eq_tol = settings.eq_tol if eq_tol is None else eq_tol
    ineq_tol = settings.ineq_tol if ineq_tol is None else ineq_tol
    y = np.asarray(getattr(y, "data", y), dtype=np.float64).ravel()
    if y.size != ev.n_out:
        raise ShapeMismatchException("violation_metrics", [(ev.n_out,), y.shape])

    metrics = ViolationMetrics()
    if ev.n_ineq:
        ineq = np.maximum(ev.A @ y - ev.b, 0.0)
        metrics.ineq_max = float(ineq.max())
        metrics.ineq_mean = float(ineq.mean())
        metrics.ineq_count = int((ineq > 0.0).sum())
        metrics.ineq_count_tol = int((ineq > ineq_tol).sum())
    if ev.n_eq:
        eq = np.abs(ev.C @ y - ev.d)
        metrics.eq_max = float(eq.max())
        metrics.eq_mean = float(eq.mean())
        metrics.eq_count = int((eq > eq_tol).sum())
    return metrics
