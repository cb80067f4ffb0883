import numpy as np
import pytest

from hardnet.experiments.tasks import scale_for
from hardnet.monitoring import performance_profiler
from tests.factories import make_instance

@pytest.fixture
def rng():
    """Seeded generator shared by random-instance tests"""
    return np.random.default_rng(12345)

@pytest.fixture
def instance(rng):
    """One 5-output instance with 2 equalities and 2 inequalities"""
    return make_instance(rng, 5, 2, 2)

@pytest.fixture
def tiny_fitting_scale():
    return scale_for("fitting", n_train=20, n_test=41, epochs=3, batch_size=10, eval_every=1)

@pytest.fixture
def tiny_nonconvex_scale():
    return scale_for("nonconvex", n_train=40, n_test=20, epochs=2, batch_size=20, eval_every=1,
                     n_var=6, n_eq=2, n_ineq=2)

@pytest.fixture
def tiny_unicycle_scale():
    return scale_for("unicycle", n_train=4, n_test=3, epochs=1, batch_size=2, eval_every=1)

@pytest.fixture(autouse=True)
def reset_profiler():
    """Keep profiler samples from leaking between tests"""
    performance_profiler.reset()
    yield
    performance_profiler.reset()
