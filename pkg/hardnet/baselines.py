"""
Comparison methods: soft constraint penalty, DC3 completion/correction and
test-time projection of unconstrained outputs.
"""
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, Field, validator

from config import settings
from .autodiff import Tape
from .constraints import (
    AffineConstraintSpec,
    ConstraintEval,
    ReducedConstraints,
    lift,
    lift_vjp,
    reduce,
    split_output
)
from .exceptions import ConfigurationException, ShapeMismatchException
from .hardnet_aff import HardNetAffLayer
from .hardnet_cvx import Polyhedron, project_cvx

logger = logging.getLogger(__name__)

# Config schemas
class SoftPenaltyConfig(BaseModel):
    lambda_ineq: float = Field(default_factory=lambda: settings.soft_lambda_ineq)
    lambda_eq: float = Field(default_factory=lambda: settings.soft_lambda_eq)

    @validator('lambda_ineq', 'lambda_eq')
    def validate_weight(cls, v):
        if v < 0:
            raise ValueError('Penalty weights must be nonnegative')
        return v

class Dc3Config(BaseModel):
    correction_steps: int = Field(default_factory=lambda: settings.dc3_steps)
    correction_lr: float = Field(default_factory=lambda: settings.dc3_lr)
    train_unroll: bool = True

    @validator('correction_steps')
    def validate_steps(cls, v):
        if v < 0:
            raise ValueError('Correction steps must be nonnegative')
        return v

    @validator('correction_lr')
    def validate_lr(cls, v):
        if v <= 0:
            raise ValueError('Correction step size must be positive')
        return v

# Soft penalty

def _penalty_terms(y: np.ndarray, ev: ConstraintEval, cfg: SoftPenaltyConfig) -> Tuple[float, np.ndarray]:
    """Penalty value and its gradient w.r.t. y for one sample"""
    value, grad = 0.0, np.zeros_like(y)
    if ev.n_ineq:
        viol = np.maximum(ev.A @ y - ev.b, 0.0)
        value += cfg.lambda_ineq * float(viol @ viol)
        grad += 2.0 * cfg.lambda_ineq * (ev.A.T @ viol)
    if ev.n_eq:
        resid = ev.C @ y - ev.d
        value += cfg.lambda_eq * float(resid @ resid)
        grad += 2.0 * cfg.lambda_eq * (ev.C.T @ resid)
    return value, grad

def soft_penalty(y, ev: ConstraintEval, cfg: Optional[SoftPenaltyConfig] = None) -> float:
    """lambda_ineq ||ReLU(Ay - b)||^2 + lambda_eq ||Cy - d||^2"""
    cfg = cfg or SoftPenaltyConfig()
    y = np.asarray(getattr(y, "data", y), dtype=np.float64).ravel()
    if y.size != ev.n_out:
        raise ShapeMismatchException("soft_penalty", [(ev.n_out,), y.shape])
    return _penalty_terms(y, ev, cfg)[0]

def soft_penalty_node(tape: Tape, y_node: int, evs: Sequence[ConstraintEval],
                      cfg: Optional[SoftPenaltyConfig] = None) -> int:
    """Batch-mean soft penalty of the columns of y_node as a 1x1 tape node"""
    cfg = cfg or SoftPenaltyConfig()
    Y = tape.value(y_node)
    if Y.shape[1] != len(evs):
        raise ShapeMismatchException("soft_penalty", [Y.shape, (Y.shape[0], len(evs))])
    n = max(len(evs), 1)
    total, grads = 0.0, np.zeros_like(Y)
    for j, ev in enumerate(evs):
        value, grad = _penalty_terms(Y[:, j], ev, cfg)
        total += value
        grads[:, j] = grad
    grads /= n

    def vjp(g: np.ndarray):
        return (g[0, 0] * grads,)

    return tape.custom((y_node,), np.array([[total / n]]), vjp, label="soft_penalty")

# DC3

def dc3_complete(partial, ev: ConstraintEval, permutation: Optional[Sequence[int]] = None) -> np.ndarray:
    """Equality completion [C1^-1 (d - C2 partial); partial]"""
    red = reduce(ev, permutation, with_pinv=False)
    partial = np.asarray(getattr(partial, "data", partial), dtype=np.float64)
    if partial.shape[0] != red.n_reduced:
        raise ShapeMismatchException("dc3_complete", [(red.n_reduced,), partial.shape])
    return lift(partial, red, ev.d)

def _correction_steps(z2: np.ndarray, red: ReducedConstraints, cfg: Dc3Config) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Gradient steps on ||ReLU(A_tilde z2 - b_tilde)||^2; returns the final point and per-step masks"""
    masks = []
    for _ in range(cfg.correction_steps):
        if red.n_ineq == 0:
            break
        viol = red.A_tilde @ z2 - red.b_tilde
        masks.append((viol > 0.0).astype(np.float64))
        z2 = z2 - cfg.correction_lr * 2.0 * (red.A_tilde.T @ np.maximum(viol, 0.0))
    return z2, masks

def _correction_vjp(g: np.ndarray, red: ReducedConstraints, masks: List[np.ndarray], lr: float) -> np.ndarray:
    # each step has the symmetric Jacobian I - 2 lr A_tilde^T D_k A_tilde
    for mask in reversed(masks):
        g = g - 2.0 * lr * (red.A_tilde.T @ (mask * (red.A_tilde @ g)))
    return g

def dc3_correct(y, ev: ConstraintEval, cfg: Optional[Dc3Config] = None,
                permutation: Optional[Sequence[int]] = None) -> np.ndarray:
    """Inequality correction along the equality manifold, taken in reduced coordinates"""
    cfg = cfg or Dc3Config()
    y = np.asarray(getattr(y, "data", y), dtype=np.float64).ravel()
    if y.size != ev.n_out:
        raise ShapeMismatchException("dc3_correct", [(ev.n_out,), y.shape])
    red = reduce(ev, permutation, with_pinv=False)
    _, z2 = split_output(y, red)
    z2, _ = _correction_steps(z2, red, cfg)
    return lift(z2, red, ev.d)

def violation_energy(y, ev: ConstraintEval) -> float:
    """||ReLU(Ay - b)||^2, the quantity the correction descends"""
    y = np.asarray(y, dtype=np.float64).ravel()
    viol = np.maximum(ev.A @ y - ev.b, 0.0)
    return float(viol @ viol)

class Dc3Layer:
    """Completion plus unrolled correction on reduced network outputs"""

    def __init__(self, spec: AffineConstraintSpec, cfg: Optional[Dc3Config] = None):
        self.spec = spec
        self.cfg = cfg or Dc3Config()
        self._constant: Optional[ReducedConstraints] = None

    def _reduced(self, evs: Sequence[ConstraintEval]) -> List[ReducedConstraints]:
        if self.spec.matrices_constant:
            if self._constant is None:
                self._constant = reduce(evs[0], self.spec.permutation, with_pinv=False)
            B = np.stack([ev.b for ev in evs], axis=1)
            D = np.stack([ev.d for ev in evs], axis=1)
            return [self._constant.with_rhs(B, D)]
        return [reduce(ev, self.spec.permutation, with_pinv=False) for ev in evs]

    def apply(self, tape: Tape, f_node: int, xs: Sequence) -> int:
        F = tape.value(f_node)
        evs = [self.spec.evaluate(x) for x in xs]
        cfg = self.cfg
        reds = self._reduced(evs)

        if self.spec.matrices_constant:
            red = reds[0]
            D = np.stack([ev.d for ev in evs], axis=1)
            Z, masks = _correction_steps(F, red, cfg)
            Y = lift(Z, red, D)
            traces = [(red, masks, slice(None))]
        else:
            columns, traces = [], []
            for j, (red, ev) in enumerate(zip(reds, evs)):
                z, masks = _correction_steps(F[:, j], red, cfg)
                columns.append(lift(z, red, ev.d))
                traces.append((red, masks, j))
            Y = np.stack(columns, axis=1)
        unroll = cfg.train_unroll

        def vjp(g: np.ndarray):
            grad = np.zeros_like(F)
            for red, masks, cols in traces:
                g_red = lift_vjp(red, g[:, cols])
                grad[:, cols] = _correction_vjp(g_red, red, masks, cfg.correction_lr) if unroll else g_red
            return (grad,)

        return tape.custom((f_node,), Y, vjp, label="dc3")

# Test-time projection

def project_at_inference(output: np.ndarray, spec: AffineConstraintSpec, xs: Sequence,
                         method: Optional[str] = None) -> np.ndarray:
    """Project model outputs column by column; reduced outputs go through the closed form,
    full outputs through the optimization-based projection"""
    Y = np.asarray(output, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if method is None:
        method = "cvx" if Y.shape[0] == spec.n_out else "aff"
    if method not in ("aff", "cvx"):
        raise ConfigurationException(f"Unknown projection method '{method}'", field="method", value=method)

    if method == "aff":
        layer = HardNetAffLayer(spec)
        if Y.shape[0] == spec.n_out and spec.n_eq:
            Y = np.stack([split_output(Y[:, j], layer.reduce_at(x)[1])[1] for j, x in enumerate(xs)], axis=1)
        projected, _ = layer.project_batch(Y, xs)
        return projected

    if Y.shape[0] != spec.n_out:
        raise ShapeMismatchException("project_at_inference", [(spec.n_out, len(xs)), Y.shape])
    return np.stack(
        [project_cvx(Y[:, j], Polyhedron.from_eval(spec.evaluate(x))).z for j, x in enumerate(xs)],
        axis=1
    )
