"""
Closed-form projection for affine constraints.

The network predicts the reduced output f (the coordinates left after
equality elimination). The layer computes

    f* = f - A_tilde^+ ReLU(A_tilde f - b_tilde)
    y  = [C1^-1 (d - C2 f*); f*]

which satisfies every equality exactly and every inequality whenever
A_tilde has full row rank.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple
import logging

import numpy as np

from logging_config import solver_logger
from .autodiff import Tape
from .constraints import (
    AffineConstraintSpec,
    ConstraintEval,
    ReducedConstraints,
    lift,
    lift_vjp,
    reduce,
    reduced_rhs
)
from .exceptions import DegenerateConstraintException, RankDeficientException, ShapeMismatchException

logger = logging.getLogger(__name__)

@dataclass
class AffProjectionResult:
    y: np.ndarray
    f_star: np.ndarray
    active_mask: np.ndarray
    red: ReducedConstraints
    jvp: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

def project_single(f, a, b: float) -> np.ndarray:
    """f - a ReLU(a^T f - b) / ||a||^2"""
    f = np.asarray(getattr(f, "data", f), dtype=np.float64).ravel()
    a = np.asarray(getattr(a, "data", a), dtype=np.float64).ravel()
    if f.size != a.size:
        raise ShapeMismatchException("project_single", [f.shape, a.shape])
    norm_sq = float(a @ a)
    if norm_sq == 0.0:
        raise DegenerateConstraintException("Constraint normal is zero", norm=0.0)
    return f - a * max(float(a @ f) - float(b), 0.0) / norm_sq

def _vjp(red: ReducedConstraints, mask: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    """Works on one column or on a batch of columns with a matching mask"""
    g_star = lift_vjp(red, grad_y)
    if red.n_ineq == 0:
        return g_star
    return g_star - red.A_tilde.T @ (mask * (red.A_tilde_pinv.T @ g_star))

def project_aff(f_theta, red: ReducedConstraints, ev: ConstraintEval) -> AffProjectionResult:
    f = np.asarray(getattr(f_theta, "data", f_theta), dtype=np.float64).ravel()
    if f.size != red.n_reduced or ev.n_out != red.n_out:
        raise ShapeMismatchException("project_aff", [(red.n_reduced,), f.shape, (ev.n_out,), (red.n_out,)])

    if red.n_ineq:
        violation = red.A_tilde @ f - red.b_tilde
        # strict: a row sitting exactly on its boundary is inactive
        mask = violation > 0.0
        f_star = f - red.A_tilde_pinv @ np.maximum(violation, 0.0)
    else:
        mask = np.zeros(0, dtype=bool)
        f_star = f.copy()
    result = AffProjectionResult(lift(f_star, red, ev.d), f_star, mask, red)
    result.jvp = lambda g: project_aff_backward(result, g)
    return result

def project_aff_backward(result: AffProjectionResult, grad_y) -> np.ndarray:
    g = np.asarray(getattr(grad_y, "data", grad_y), dtype=np.float64).ravel()
    if g.size != result.y.size:
        raise ShapeMismatchException("project_aff_backward", [result.y.shape, g.shape])
    return _vjp(result.red, result.active_mask.astype(np.float64), g)

def _spectral_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2)) if M.size else 0.0

def approximation_constant(red: ReducedConstraints) -> float:
    """(1 + ||A_tilde^+|| ||A_tilde||) sqrt(1 + ||C1^-1 C2||^2), the factor bounding ||f - y||"""
    lift_norm = _spectral_norm(red.C1_inv @ red.C2) if red.n_eq else 0.0
    return (1.0 + _spectral_norm(red.A_tilde_pinv) * _spectral_norm(red.A_tilde)) * np.sqrt(1.0 + lift_norm ** 2)

class HardNetAffLayer:
    """Batched HardNet-Aff projection recorded as a single tape node"""

    def __init__(self, spec: AffineConstraintSpec):
        self.spec = spec
        self._constant: Optional[ReducedConstraints] = None

    @property
    def n_reduced(self) -> int:
        return self.spec.n_out - self.spec.n_eq

    def reduce_at(self, x) -> Tuple[ConstraintEval, ReducedConstraints]:
        ev = self.spec.evaluate(x)
        if self.spec.matrices_constant:
            if self._constant is None:
                self._constant = reduce(ev, self.spec.permutation)
            return ev, self._constant.with_rhs(ev.b, ev.d)
        return ev, reduce(ev, self.spec.permutation)

    def _project_constant(self, F: np.ndarray, xs: Sequence, enabled: bool):
        evs = [self.spec.evaluate(x) for x in xs]
        if self._constant is None:
            self._constant = reduce(evs[0], self.spec.permutation)
        red = self._constant
        Bt = reduced_rhs(red, np.stack([ev.b for ev in evs], axis=1), np.stack([ev.d for ev in evs], axis=1))
        D = np.stack([ev.d for ev in evs], axis=1)
        if enabled and red.n_ineq:
            violation = red.A_tilde @ F - Bt
            mask = (violation > 0.0).astype(np.float64)
            F_star = F - red.A_tilde_pinv @ np.maximum(violation, 0.0)
        else:
            mask = np.zeros((red.n_ineq, F.shape[1]))
            F_star = F
        Y = lift(F_star, red, D)

        def vjp(g: np.ndarray):
            return (_vjp(red, mask, g),)
        return Y, vjp

    def _project_each(self, F: np.ndarray, xs: Sequence, enabled: bool):
        from .hardnet_cvx import Polyhedron, project_cvx

        columns, vjps = [], []
        for j, x in enumerate(xs):
            try:
                ev, red = self.reduce_at(x)
            except RankDeficientException:
                # Only possible when rows from a variable constraint set line up
                ev = self.spec.evaluate(x)
                if ev.n_eq:
                    raise
                if not enabled:
                    columns.append(F[:, j].copy())
                    vjps.append(lambda g: g.copy())
                    continue
                solver_logger.log_fallback("hardnet_aff", "A_tilde rank deficient, using min-norm projection",
                                           sample=j, n_ineq=ev.n_ineq)
                res = project_cvx(F[:, j], Polyhedron.from_eval(ev))
                columns.append(res.z)
                vjps.append(res.jvp)
                continue
            if enabled:
                res = project_aff(F[:, j], red, ev)
                columns.append(res.y)
                vjps.append(res.jvp)
            else:
                columns.append(lift(F[:, j], red, ev.d))
                vjps.append(lambda g, red=red: _vjp(red, np.zeros(red.n_ineq), g))
        Y = np.stack(columns, axis=1)

        def vjp(g: np.ndarray):
            return (np.stack([fn(g[:, j]) for j, fn in enumerate(vjps)], axis=1),)
        return Y, vjp

    def project_batch(self, F: np.ndarray, xs: Sequence, enabled: bool = True):
        """Project each column of F (n_reduced x B); returns (Y, vjp)"""
        F = np.asarray(F, dtype=np.float64)
        if F.shape[0] != self.n_reduced or F.shape[1] != len(xs):
            raise ShapeMismatchException("hardnet_aff", [(self.n_reduced, len(xs)), F.shape])
        if self.spec.matrices_constant:
            return self._project_constant(F, xs, enabled)
        return self._project_each(F, xs, enabled)

    def apply(self, tape: Tape, f_node: int, xs: Sequence, enabled: bool = True) -> int:
        """Record y for every column of f_node; with enabled=False only the equality completion is applied"""
        Y, vjp = self.project_batch(tape.value(f_node), xs, enabled)
        return tape.custom((f_node,), Y, vjp, label="hardnet_aff")
