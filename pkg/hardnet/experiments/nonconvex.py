"""
Learning a solver for a family of nonconvex programs

    min_y  1/2 y^T Q y + p^T sin(y)   s.t.  A y <= b,  C y = x

parameterised by x in [-1, 1]^n_eq.
"""
from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np
from scipy import linalg

from ..autodiff import Tape
from ..constraints import AffineConstraintSpec, ConstraintEval, violation_metrics
from ..exceptions import ConfigurationException, RankDeficientException
from .tasks import EvalResult, Forward, Predict, Task, TaskScale, ViolationSummary, scale_for

logger = logging.getLogger(__name__)

Q_RIDGE = 1e-3
B_MARGIN = 0.5
MAX_RESAMPLES = 10

@dataclass
class NonconvexProblem:
    Q: np.ndarray
    p: np.ndarray
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def n_eq(self) -> int:
        return self.C.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.A.shape[0]

def gen_nonconvex_task(n: int, n_eq: int, n_ineq: int, seed: int) -> NonconvexProblem:
    """Random instance whose constraints are feasible for every x in the unit box"""
    if n_eq + n_ineq > n:
        raise ConfigurationException(
            f"n_eq + n_ineq must not exceed n ({n_eq} + {n_ineq} > {n})",
            field="n_ineq",
            value=n_ineq
        )
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    Q = G.T @ G + Q_RIDGE * np.eye(n)
    p = rng.standard_normal(n)
    A = rng.standard_normal((n_ineq, n))

    for attempt in range(MAX_RESAMPLES):
        C = rng.standard_normal((n_eq, n))
        if n_eq == 0 or np.linalg.matrix_rank(C) == n_eq:
            break
        logger.warning(f"Resampling rank-deficient C (attempt {attempt + 1})")
    else:
        raise RankDeficientException("C", min_singular_value=float(linalg.svdvals(C).min()))

    # y_p(x) = C^+ x is feasible on the whole box once b covers |A C^+| row sums
    if n_eq:
        b = np.abs(A @ linalg.pinv(C)).sum(axis=1) + B_MARGIN
    else:
        b = np.full(n_ineq, B_MARGIN)
    return NonconvexProblem(Q, p, A, b, C, seed)

def nonconvex_objective(y, problem: NonconvexProblem) -> float:
    y = np.asarray(getattr(y, "data", y), dtype=np.float64).ravel()
    return float(0.5 * y @ problem.Q @ y + problem.p @ np.sin(y))

def objective_node(tape: Tape, y_node: int, problem: NonconvexProblem) -> int:
    """Batch mean of the objective over the columns of y_node"""
    batch = tape.shape(y_node)[1]
    Qy = tape.matmul(tape.leaf(problem.Q), y_node)
    quad = tape.scale(tape.sum(tape.mul(y_node, Qy)), 0.5)
    lin = tape.sum(tape.matmul(tape.leaf(problem.p.reshape(1, -1)), tape.sin(y_node)))
    return tape.scale(tape.add(quad, lin), 1.0 / batch)

def nonconvex_spec(problem: NonconvexProblem) -> AffineConstraintSpec:
    def evaluator(x) -> ConstraintEval:
        return ConstraintEval(problem.A, problem.b, problem.C, np.asarray(x, dtype=np.float64).ravel())

    return AffineConstraintSpec(
        evaluator,
        n_out=problem.n,
        n_ineq=problem.n_ineq,
        n_eq=problem.n_eq,
        matrices_constant=True,
        name="nonconvex"
    )

class NonconvexTask(Task):
    name = "nonconvex"

    def __init__(self, seed: int = 0, scale: Optional[TaskScale] = None):
        scale = scale or scale_for("nonconvex")
        self.problem = gen_nonconvex_task(scale.n_var, scale.n_eq, scale.n_ineq, seed)
        super().__init__(nonconvex_spec(self.problem), seed, scale)
        self._train = np.random.default_rng([seed, 1]).uniform(-1.0, 1.0, size=(scale.n_eq, scale.n_train))
        self._test = np.random.default_rng([seed, 2]).uniform(-1.0, 1.0, size=(scale.n_eq, scale.n_test))

    def train_inputs(self) -> np.ndarray:
        return self._train

    def test_inputs(self) -> np.ndarray:
        return self._test

    def loss(self, tape: Tape, forward: Forward, X: np.ndarray):
        out = forward(tape, tape.leaf(X), self.samples(X))
        return objective_node(tape, out.y, self.problem), out.penalty

    def evaluate(self, predict: Predict) -> EvalResult:
        X = self.test_inputs()
        Y = predict(X)
        objectives = [nonconvex_objective(Y[:, j], self.problem) for j in range(X.shape[1])]
        per_sample = [violation_metrics(Y[:, j], self.spec.evaluate(X[:, j])) for j in range(X.shape[1])]
        return EvalResult(
            metric=float(np.mean(objectives)),
            violations=ViolationSummary.averaged(per_sample),
            n_samples=X.shape[1]
        )
