"""Desk-scale experiment runs; deselect with -m "not slow"."""
import pytest

from hardnet.experiments.models import Model
from hardnet.experiments.runner import RunRequest, make_task, run_experiment
from hardnet.experiments.training import TrainConfig, train

pytestmark = pytest.mark.slow

@pytest.mark.parametrize("seed", range(5))
def test_fitting_hardnet_aff(seed):
    """Zero violations at every logged epoch and a close fit"""
    task = make_task("fitting", seed)
    result = train(Model("hardnet-aff", task, seed=seed), task, TrainConfig(seed=seed))
    assert all(row.ineq_count == 0 for row in result.history)
    assert result.history[-1].metric <= 0.6

def test_fitting_nn_violates():
    """The unconstrained network breaks the constraint on much of the grid"""
    task = make_task("fitting", 0)
    result = train(Model("nn", task), task, TrainConfig())
    assert result.history[-1].ineq_count >= 50

def test_nonconvex_ordering():
    """HardNet-Aff is feasible and beats projecting an unconstrained network afterwards"""
    task = make_task("nonconvex", 0)
    aff = train(Model("hardnet-aff", task), task, TrainConfig()).history[-1]
    proj = train(Model("nn-proj", task), task, TrainConfig()).history[-1]
    assert aff.ineq_count == 0 and aff.eq_count == 0
    assert aff.metric < proj.metric

def test_unicycle_safety():
    """HardNet-Aff trajectories never violate the barrier; the plain network does"""
    task = make_task("unicycle", 0)
    aff = train(Model("hardnet-aff", task), task, TrainConfig())
    assert aff.history[-1].ineq_max <= 1e-6
    assert aff.final.result.extras["min_h_ellipse"] >= -1e-6
    nn = train(Model("nn", task), task, TrainConfig())
    assert nn.history[-1].ineq_max > 0.0

@pytest.mark.parametrize("task", ["fitting", "nonconvex", "unicycle"])
def test_metrics_reproducible(task, tmp_path):
    """Same seed, bit-identical metrics.csv"""
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        run_experiment(RunRequest(task=task, model="hardnet-aff", seed=1, out_dir=str(out)))
        outputs.append((out / "metrics.csv").read_bytes())
    assert outputs[0] == outputs[1]
