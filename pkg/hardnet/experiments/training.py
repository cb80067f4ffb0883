from dataclasses import dataclass, field
from typing import List, Optional
import logging

import numpy as np
from pydantic import BaseModel, Field, validator

from config import settings
from logging_config import experiment_logger
from ..autodiff import Tape, backward
from ..constraints import check_assumption1
from ..nn import mlp_gradients, optimizer_new, optimizer_step
from .evaluation import Evaluation, evaluate
from .models import ASSUMPTION_KINDS, Model
from .reporting import MetricsRow
from .tasks import Task

logger = logging.getLogger(__name__)

class TrainConfig(BaseModel):
    """Training hyperparameters; unset sizes come from the task scale"""
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    eval_every: Optional[int] = None
    lr: float = Field(default_factory=lambda: settings.learning_rate)
    optimizer: str = "adam"
    # epochs 1..k train with the HardNet projection disabled; DC3 keeps its correction steps
    warm_start_epochs: int = 0
    warm_start_penalty: bool = False
    seed: int = 0

    @validator('epochs', 'warm_start_epochs')
    def validate_nonnegative(cls, v):
        if v is not None and v < 0:
            raise ValueError('Epoch counts must be nonnegative')
        return v

    @validator('batch_size', 'eval_every')
    def validate_positive(cls, v):
        if v is not None and v < 1:
            raise ValueError('Batch size and evaluation interval must be at least 1')
        return v

    @validator('lr')
    def validate_lr(cls, v):
        if v <= 0:
            raise ValueError('Learning rate must be positive')
        return v

    @validator('optimizer')
    def validate_optimizer(cls, v):
        if v not in ('adam', 'sgd'):
            raise ValueError('Optimizer must be adam or sgd')
        return v

    def resolved(self, task: Task) -> "TrainConfig":
        return self.model_copy(update={
            "epochs": task.scale.epochs if self.epochs is None else self.epochs,
            "batch_size": task.scale.batch_size if self.batch_size is None else self.batch_size,
            "eval_every": task.scale.eval_every if self.eval_every is None else self.eval_every,
        })

    def config_items(self):
        return {f"train.{k}": v for k, v in self.model_dump().items()}

@dataclass
class TrainResult:
    model: Model
    history: List[MetricsRow] = field(default_factory=list)
    final: Optional[Evaluation] = None

def _batch_loss(model: Model, task: Task, X: np.ndarray, update: bool, state=None):
    """Loss (plus penalty) on one batch; with update=True also takes an optimizer step"""
    tape = Tape()
    loss_node, penalty = task.loss(tape, model.forward, X)
    total = loss_node if penalty is None else tape.add(loss_node, penalty)
    value = float(tape.value(total)[0, 0])
    if update:
        grads = backward(tape, np.ones((1, 1)), output=total)
        model.params, state = optimizer_step(model.params, mlp_gradients(model.params, tape, grads, model.prefix), state)
    return value, state

def _set_phase(model: Model, epoch: int, cfg: TrainConfig):
    warm = epoch <= cfg.warm_start_epochs
    if warm and model.projection_enabled:
        logger.info(f"Warm start: projection disabled for epochs 1..{cfg.warm_start_epochs}")
    elif not warm and not model.projection_enabled:
        logger.info(f"Warm start finished; projection enabled from epoch {epoch}")
    model.projection_enabled = not warm
    model.warm_penalty = warm and cfg.warm_start_penalty

def _record(history: List[MetricsRow], model: Model, task: Task, cfg: TrainConfig, epoch: int, loss: float):
    evaluation = evaluate(model, task)
    row = evaluation.row(task, model, cfg.seed, epoch, loss)
    history.append(row)
    experiment_logger.log_epoch(task.name, model.kind, cfg.seed, epoch, loss, row.metric,
                                row.ineq_count, row.eq_count)
    return evaluation

def train(model: Model, task: Task, cfg: Optional[TrainConfig] = None) -> TrainResult:
    """Minibatch training with an optional warm-start phase and periodic held-out evaluation"""
    cfg = (cfg or TrainConfig()).resolved(task)
    result = TrainResult(model)

    if model.kind in ASSUMPTION_KINDS:
        check_assumption1(task.spec, task.probe_points()).raise_for_failure()

    if not model.trainable:
        result.final = _record(result.history, model, task, cfg, 0, float("nan"))
        return result

    X = task.train_inputs()
    state = optimizer_new(model.params, cfg.optimizer, cfg.lr)
    _set_phase(model, 1 if cfg.epochs else cfg.warm_start_epochs + 1, cfg)
    loss, _ = _batch_loss(model, task, X, update=False)
    result.final = _record(result.history, model, task, cfg, 0, loss)

    rng = np.random.default_rng(cfg.seed)
    n = X.shape[1]
    for epoch in range(1, cfg.epochs + 1):
        _set_phase(model, epoch, cfg)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch_loss, state = _batch_loss(model, task, X[:, idx], update=True, state=state)
            total += batch_loss * idx.size
        loss = total / n

        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            result.final = _record(result.history, model, task, cfg, epoch, loss)
        else:
            logger.debug(f"epoch {epoch}: loss={loss:.6g}", extra={"epoch": epoch, "loss": loss})

    model.projection_enabled = True
    model.warm_penalty = False
    return result
