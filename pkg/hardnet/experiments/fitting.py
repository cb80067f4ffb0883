"""
One-dimensional function fitting under a single input-dependent affine constraint.

The target is piecewise (sine bump, flat, parabola, line) and the constraint
a(x) y <= b(x) switches direction and offset between the same four pieces.
"""
from typing import Optional, Tuple
import logging

import numpy as np

from ..autodiff import Tape
from ..constraints import AffineConstraintSpec, ConstraintEval, violation_metrics
from .tasks import EvalResult, Forward, Predict, Task, TaskScale, ViolationSummary, scale_for

logger = logging.getLogger(__name__)

TRAIN_RANGE = (-1.2, 1.2)
TEST_RANGE = (-2.0, 2.0)

def fitting_target(x: float) -> float:
    x = float(x)
    if x <= -1.0:
        return -5.0 * np.sin(np.pi / 2.0 * (x + 1.0))
    if x <= 0.0:
        return 0.0
    if x <= 1.0:
        return 4.0 - 9.0 * (x - 2.0 / 3.0) ** 2
    return 5.0 * (1.0 - x) + 3.0

def fitting_constraint(x: float) -> Tuple[float, float]:
    """(a, b) of the constraint a y <= b at x"""
    x = float(x)
    if x <= -1.0:
        return -1.0, -5.0 * np.sin(np.pi / 2.0 * (x + 1.0)) ** 2
    if x <= 0.0:
        return 1.0, 0.0
    if x <= 1.0:
        return -1.0, (9.0 * (x - 2.0 / 3.0) ** 2 - 4.0) * x
    return 1.0, 4.5 * (1.0 - x) + 3.0

def fitting_spec() -> AffineConstraintSpec:
    def evaluator(x) -> ConstraintEval:
        a, b = fitting_constraint(np.asarray(x, dtype=np.float64).ravel()[0])
        return ConstraintEval.create(1, A=[[a]], b=[b])

    return AffineConstraintSpec(evaluator, n_out=1, n_ineq=1, n_eq=0, name="fitting")

class FittingTask(Task):
    name = "fitting"

    def __init__(self, seed: int = 0, scale: Optional[TaskScale] = None):
        super().__init__(fitting_spec(), seed, scale or scale_for("fitting"))
        rng = np.random.default_rng(seed)
        self._train = rng.uniform(*TRAIN_RANGE, size=(1, self.scale.n_train))
        self._test = np.linspace(*TEST_RANGE, self.scale.n_test).reshape(1, -1)

    def train_inputs(self) -> np.ndarray:
        return self._train

    def test_inputs(self) -> np.ndarray:
        return self._test

    @staticmethod
    def targets(X: np.ndarray) -> np.ndarray:
        return np.array([[fitting_target(x) for x in X.ravel()]])

    def loss(self, tape: Tape, forward: Forward, X: np.ndarray):
        """Mean squared error over the batch"""
        x_node = tape.leaf(X)
        out = forward(tape, x_node, self.samples(X))
        diff = tape.sub(out.y, tape.leaf(self.targets(X)))
        return tape.scale(tape.sum(tape.square(diff)), 1.0 / X.shape[1]), out.penalty

    def evaluate(self, predict: Predict) -> EvalResult:
        X = self.test_inputs()
        Y = predict(X)
        targets = self.targets(X)
        rmse = float(np.sqrt(np.mean((Y - targets) ** 2)))

        per_sample, rows = [], []
        for j, x in enumerate(X.ravel()):
            ev = self.spec.evaluate(X[:, j])
            per_sample.append(violation_metrics(Y[:, j], ev))
            rows.append([x, targets[0, j], Y[0, j], ev.A[0, 0], ev.b[0]])

        return EvalResult(
            metric=rmse,
            violations=ViolationSummary.pooled(per_sample),
            n_samples=X.shape[1],
            artifact_name="predictions.csv",
            artifact_header=["x", "target", "prediction", "a", "b"],
            artifact_rows=rows
        )
