from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, validator

from ..autodiff import Tape
from ..constraints import AffineConstraintSpec, ViolationMetrics
from ..exceptions import ConfigurationException

logger = logging.getLogger(__name__)

TASK_NAMES = ("fitting", "nonconvex", "unicycle")
SCALE_NAMES = ("small", "full")

@dataclass
class ModelOutput:
    """Tape nodes produced by a model forward pass"""
    y: int
    penalty: Optional[int] = None

# (tape, input node, per-sample inputs) -> ModelOutput
Forward = Callable[[Tape, int, Sequence[Any]], ModelOutput]
# inputs (n_in x B) -> full outputs (n_out x B)
Predict = Callable[[np.ndarray], np.ndarray]

@dataclass
class ViolationSummary:
    """Counts inequality entries above settings.ineq_tol"""
    ineq_max: float = 0.0
    ineq_mean: float = 0.0
    ineq_count: float = 0.0
    eq_max: float = 0.0
    eq_mean: float = 0.0
    eq_count: float = 0.0

    @classmethod
    def pooled(cls, per_sample: Sequence[ViolationMetrics]) -> "ViolationSummary":
        """Max and mean over all samples, total violation count"""
        if not per_sample:
            return cls()
        return cls(
            ineq_max=max(m.ineq_max for m in per_sample),
            ineq_mean=float(np.mean([m.ineq_mean for m in per_sample])),
            ineq_count=float(sum(m.ineq_count_tol for m in per_sample)),
            eq_max=max(m.eq_max for m in per_sample),
            eq_mean=float(np.mean([m.eq_mean for m in per_sample])),
            eq_count=float(sum(m.eq_count for m in per_sample))
        )

    @classmethod
    def averaged(cls, per_sample: Sequence[ViolationMetrics]) -> "ViolationSummary":
        """Per-sample max/mean/count, each averaged over samples"""
        if not per_sample:
            return cls()
        rows = np.array([m.reported() for m in per_sample], dtype=np.float64)
        return cls(*(float(v) for v in rows.mean(axis=0)))

@dataclass
class EvalResult:
    metric: float
    violations: ViolationSummary
    n_samples: int
    artifact_name: Optional[str] = None
    artifact_header: List[str] = field(default_factory=list)
    artifact_rows: List[List[Any]] = field(default_factory=list)
    extras: Dict[str, float] = field(default_factory=dict)

class TaskScale(BaseModel):
    name: str = "small"
    n_train: int
    n_test: int
    epochs: int
    batch_size: int
    eval_every: int = 1
    n_var: Optional[int] = None
    n_eq: Optional[int] = None
    n_ineq: Optional[int] = None

    @validator('name')
    def validate_name(cls, v):
        if v not in SCALE_NAMES:
            raise ValueError(f"Scale must be one of {', '.join(SCALE_NAMES)}")
        return v

    @validator('n_train', 'n_test', 'batch_size', 'eval_every')
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError('Sizes must be at least 1')
        return v

    @validator('epochs')
    def validate_epochs(cls, v):
        if v < 0:
            raise ValueError('Epochs must be nonnegative')
        return v

    def config_items(self) -> Dict[str, Any]:
        return {f"scale.{k}": v for k, v in self.model_dump().items() if v is not None}

# Desk-scale and full-scale defaults per task
SCALES: Dict[str, Dict[str, Dict[str, Any]]] = {
    "fitting": {
        "small": dict(n_train=50, n_test=401, epochs=1000, batch_size=10, eval_every=50),
        "full": dict(n_train=50, n_test=401, epochs=5000, batch_size=10, eval_every=100),
    },
    "nonconvex": {
        "small": dict(n_train=2000, n_test=1000, epochs=100, batch_size=200, eval_every=10,
                      n_var=20, n_eq=10, n_ineq=10),
        "full": dict(n_train=10000, n_test=1000, epochs=500, batch_size=200, eval_every=50,
                      n_var=100, n_eq=50, n_ineq=50),
    },
    "unicycle": {
        "small": dict(n_train=100, n_test=100, epochs=30, batch_size=20, eval_every=10),
        "full": dict(n_train=1000, n_test=100, epochs=200, batch_size=50, eval_every=20),
    },
}

def scale_for(task: str, scale: str = "small", **overrides) -> TaskScale:
    if task not in SCALES:
        raise ConfigurationException(f"Unknown task '{task}'", field="task", value=task)
    if scale not in SCALE_NAMES:
        raise ConfigurationException(f"Unknown scale '{scale}'", field="scale", value=scale)
    values = {**SCALES[task][scale], **{k: v for k, v in overrides.items() if v is not None}}
    return TaskScale(name=scale, **values)

class Task(ABC):
    """A learning problem with an input-dependent affine constraint set"""

    name: str = "task"

    def __init__(self, spec: AffineConstraintSpec, seed: int, scale: TaskScale):
        self.spec = spec
        self.seed = seed
        self.scale = scale

    @property
    def n_in(self) -> int:
        return self.train_inputs().shape[0]

    @property
    def n_out(self) -> int:
        return self.spec.n_out

    @property
    def n_eq(self) -> int:
        return self.spec.n_eq

    @abstractmethod
    def train_inputs(self) -> np.ndarray:
        """n_in x N training inputs"""

    @abstractmethod
    def test_inputs(self) -> np.ndarray:
        """n_in x M held-out inputs"""

    def samples(self, X: np.ndarray) -> List[np.ndarray]:
        return [X[:, j].copy() for j in range(X.shape[1])]

    def probe_points(self, n: int = 20) -> List[np.ndarray]:
        X = self.train_inputs()
        idx = np.linspace(0, X.shape[1] - 1, min(n, X.shape[1])).astype(int)
        return [X[:, j].copy() for j in idx]

    def base_node(self, tape: Tape, x_node: int) -> Optional[int]:
        """Optional fixed policy the network output is added to"""
        return None

    def base_output(self, X: np.ndarray) -> Optional[np.ndarray]:
        return None

    @abstractmethod
    def loss(self, tape: Tape, forward: Forward, X: np.ndarray) -> Tuple[int, Optional[int]]:
        """Record the training loss for a batch; returns (loss node, penalty node or None)"""

    @abstractmethod
    def evaluate(self, predict: Predict) -> EvalResult:
        """Metric and violations on the held-out inputs"""

    def config_items(self) -> Dict[str, Any]:
        return {"task.name": self.name, "task.seed": self.seed, **self.scale.config_items()}

def add_all(tape: Tape, nodes: Sequence[int]) -> Optional[int]:
    """Sum a list of equal-shape nodes"""
    total = None
    for node in nodes:
        total = node if total is None else tape.add(total, node)
    return total
