import math

import numpy as np
import pytest
from pydantic import ValidationError

from hardnet.autodiff import Tape
from hardnet.constraints import ConstraintEval
from hardnet.exceptions import AssumptionViolationException, ConfigurationException
from hardnet.experiments.evaluation import evaluate
from hardnet.experiments.fitting import FittingTask
from hardnet.experiments.models import Model
from hardnet.experiments.nonconvex import NonconvexTask
from hardnet.experiments.tasks import Task, scale_for
from hardnet.experiments.training import TrainConfig, _set_phase, train
from hardnet.experiments.unicycle import UnicycleConfig, UnicycleTask
from hardnet.monitoring import performance_profiler
from tests.factories import constant_spec

WIDTH = 16

class SingularBlockTask(Task):
    """Two outputs with an equality that does not involve the first one"""
    name = "singular"

    def __init__(self):
        ev = ConstraintEval.create(2, C=[[0.0, 1.0]], d=[1.0])
        super().__init__(constant_spec(ev), 0, scale_for("fitting", n_train=4, n_test=4, epochs=1))

    def train_inputs(self):
        return np.zeros((1, 4))

    def test_inputs(self):
        return np.zeros((1, 4))

    def loss(self, tape, forward, X):
        out = forward(tape, tape.leaf(X), self.samples(X))
        return tape.sum(tape.square(out.y)), out.penalty

    def evaluate(self, predict):
        raise AssertionError("training should stop before evaluation")

def test_train_config_resolves_from_scale(tiny_fitting_scale):
    """Unset sizes come from the task scale"""
    task = FittingTask(seed=0, scale=tiny_fitting_scale)
    cfg = TrainConfig(batch_size=5).resolved(task)
    assert (cfg.epochs, cfg.batch_size, cfg.eval_every) == (3, 5, 1)
    assert cfg.config_items()["train.batch_size"] == 5

@pytest.mark.parametrize("values", [
    {"epochs": -1}, {"batch_size": 0}, {"lr": 0.0}, {"optimizer": "rmsprop"}, {"warm_start_epochs": -2},
])
def test_train_config_validation(values):
    """Out-of-range hyperparameters are rejected"""
    with pytest.raises(ValidationError):
        TrainConfig(**values)

def test_model_rejects_unknown_kind(tiny_fitting_scale):
    """Only the listed model kinds exist"""
    with pytest.raises(ConfigurationException):
        Model("mystery", FittingTask(scale=tiny_fitting_scale))

def test_cbf_qp_only_for_control(tiny_fitting_scale):
    """The CBF-QP controller needs a task that defines it"""
    with pytest.raises(ConfigurationException):
        Model("cbf-qp", FittingTask(scale=tiny_fitting_scale))

def test_reduced_kinds_predict_free_coordinates(tiny_nonconvex_scale):
    """DC3 and HardNet-Aff networks output n_out - n_eq values, the rest output n_out"""
    task = NonconvexTask(seed=0, scale=tiny_nonconvex_scale)
    assert Model("hardnet-aff", task, hidden_width=WIDTH).params.layer_sizes[-1] == 4
    assert Model("dc3", task, hidden_width=WIDTH).params.layer_sizes[-1] == 4
    assert Model("hardnet-cvx", task, hidden_width=WIDTH).params.layer_sizes[-1] == 6
    assert Model("nn", task, hidden_width=WIDTH, hidden_layers=1).params.layer_sizes == [2, WIDTH, 6]

@pytest.mark.parametrize("kind", ["hardnet-aff", "hardnet-cvx", "nn-proj"])
def test_projected_predictions_are_feasible(kind, tiny_nonconvex_scale):
    """Untrained projected models already satisfy every constraint"""
    task = NonconvexTask(seed=1, scale=tiny_nonconvex_scale)
    model = Model(kind, task, hidden_width=WIDTH)
    X = task.test_inputs()
    Y = model.predict(X)
    for j in range(X.shape[1]):
        ev = task.spec.evaluate(X[:, j])
        assert np.all(ev.A @ Y[:, j] <= ev.b + 1e-6)
        assert np.allclose(ev.C @ Y[:, j], ev.d, atol=1e-6)

def test_projection_free_cvx_model_matches_nn(tiny_fitting_scale):
    """Without its projection at test time hardnet-cvx-np is the plain network"""
    task = FittingTask(scale=tiny_fitting_scale)
    X = task.test_inputs()
    np_model = Model("hardnet-cvx-np", task, seed=3, hidden_width=WIDTH)
    nn_model = Model("nn", task, seed=3, hidden_width=WIDTH)
    assert np.allclose(np_model.predict(X), nn_model.predict(X))

def test_penalty_recorded_for_penalty_kinds(tiny_fitting_scale):
    """Soft models add a penalty in training only; warm-start penalties follow the flag"""
    task = FittingTask(scale=tiny_fitting_scale)
    X = task.train_inputs()

    def penalty_of(model, training=True):
        tape = Tape()
        return model.forward(tape, tape.leaf(X), task.samples(X), training=training).penalty

    soft = Model("soft", task, hidden_width=WIDTH)
    assert penalty_of(soft) is not None
    assert penalty_of(soft, training=False) is None

    aff = Model("hardnet-aff", task, hidden_width=WIDTH)
    assert penalty_of(aff) is None
    _set_phase(aff, 1, TrainConfig(warm_start_epochs=2, warm_start_penalty=True))
    assert not aff.projection_enabled
    assert penalty_of(aff) is not None
    _set_phase(aff, 3, TrainConfig(warm_start_epochs=2, warm_start_penalty=True))
    assert aff.projection_enabled and not aff.warm_penalty

def test_dc3_correction_kept_during_warm_start(tiny_nonconvex_scale):
    """Warm start disables projections but leaves DC3's correction steps in place"""
    task = NonconvexTask(seed=0, scale=tiny_nonconvex_scale)
    model = Model("dc3", task, hidden_width=WIDTH)
    X = task.train_inputs()

    def output():
        tape = Tape()
        return tape.value(model.forward(tape, tape.leaf(X), task.samples(X)).y).copy()

    _set_phase(model, 3, TrainConfig(warm_start_epochs=2))
    corrected = output()
    _set_phase(model, 1, TrainConfig(warm_start_epochs=2))
    assert not model.projection_enabled
    assert np.array_equal(output(), corrected)

def test_zero_epochs_single_evaluation(tiny_fitting_scale):
    """epochs=0 evaluates the initial model once"""
    task = FittingTask(scale=tiny_fitting_scale)
    result = train(Model("nn", task, hidden_width=WIDTH), task, TrainConfig(epochs=0))
    assert [row.epoch for row in result.history] == [0]
    assert math.isfinite(result.history[0].loss)
    assert result.final is not None

def test_history_follows_eval_interval(tiny_fitting_scale):
    """Rows at epoch 0, every eval_every epochs and the last epoch"""
    task = FittingTask(scale=tiny_fitting_scale)
    result = train(Model("nn", task, hidden_width=WIDTH), task, TrainConfig(epochs=5, eval_every=2))
    assert [row.epoch for row in result.history] == [0, 2, 4, 5]

def test_training_reduces_fitting_loss(tiny_fitting_scale):
    """A few epochs of Adam lower the training loss"""
    task = FittingTask(scale=tiny_fitting_scale)
    result = train(Model("nn", task, hidden_width=WIDTH), task, TrainConfig(epochs=20, eval_every=20, lr=1e-2))
    assert result.history[-1].loss < result.history[0].loss

def test_hardnet_aff_never_violates(tiny_fitting_scale):
    """HardNet-Aff reports zero violations at every evaluated epoch"""
    task = FittingTask(scale=tiny_fitting_scale)
    result = train(Model("hardnet-aff", task, hidden_width=WIDTH), task, TrainConfig())
    assert len(result.history) == 4
    assert all(row.ineq_count == 0 and row.eq_count == 0 for row in result.history)

def test_warm_start_restores_projection(tiny_fitting_scale):
    """Models leave training with the projection enabled"""
    task = FittingTask(scale=tiny_fitting_scale)
    model = Model("hardnet-cvx", task, hidden_width=WIDTH)
    train(model, task, TrainConfig(warm_start_epochs=2, warm_start_penalty=True))
    assert model.projection_enabled
    assert not model.warm_penalty

def test_training_is_deterministic(tiny_nonconvex_scale):
    """Same seed, same history"""
    def run():
        task = NonconvexTask(seed=4, scale=tiny_nonconvex_scale)
        result = train(Model("dc3", task, seed=4, hidden_width=WIDTH), task, TrainConfig(seed=4))
        return [row.values(deterministic=True) for row in result.history]

    assert run() == run()

def test_assumption_failure_aborts(tiny_fitting_scale):
    """Kinds that need an invertible equality block check it before training"""
    task = SingularBlockTask()
    with pytest.raises(AssumptionViolationException):
        train(Model("hardnet-aff", task, hidden_width=WIDTH), task)

def test_controller_without_parameters(tiny_unicycle_scale):
    """The CBF-QP baseline is evaluated once with no loss"""
    task = UnicycleTask(seed=0, scale=tiny_unicycle_scale, cfg=UnicycleConfig(n_step=5))
    model = Model("cbf-qp", task)
    assert not model.trainable
    result = train(model, task)
    assert len(result.history) == 1
    assert math.isnan(result.history[0].loss)
    assert result.history[0].ineq_count == 0
    assert model.save("unused.bin") is False

def test_unicycle_residual_policy_trains(tiny_unicycle_scale):
    """The network residual on top of the nominal controller trains through the rollout"""
    task = UnicycleTask(seed=0, scale=tiny_unicycle_scale, cfg=UnicycleConfig(n_step=5))
    result = train(Model("hardnet-aff", task, hidden_width=WIDTH), task, TrainConfig())
    assert [row.epoch for row in result.history] == [0, 1]
    assert all(math.isfinite(row.loss) for row in result.history)

def test_evaluate_times_and_profiles(tiny_fitting_scale):
    """Evaluation reports per-sample time and records a profiler sample"""
    task = FittingTask(scale=tiny_fitting_scale)
    model = Model("nn", task, hidden_width=WIDTH)
    evaluation = evaluate(model, task)
    assert evaluation.time_ms >= 0.0
    assert performance_profiler.get_operation_stats("evaluate.fitting.nn")["count"] == 1
    row = evaluation.row(task, model, seed=0, epoch=0, loss=1.5)
    assert (row.task, row.model, row.loss) == ("fitting", "nn", 1.5)
