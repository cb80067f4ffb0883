import numpy as np
import pytest

from hardnet.autodiff import Tape, backward, finite_diff_jacobian
from hardnet.constraints import AffineConstraintSpec, ConstraintEval, lift, reduce, split_output
from hardnet.exceptions import DegenerateConstraintException, ShapeMismatchException
from hardnet.hardnet_aff import (
    HardNetAffLayer,
    approximation_constant,
    project_aff,
    project_aff_backward,
    project_single
)
from hardnet.hardnet_cvx import kkt_enumeration_oracle
from hardnet.nn import mlp_forward, mlp_gradients, mlp_new
from tests.factories import make_instance, make_well_posed, random_sizes

@pytest.mark.parametrize("f, a, b, expected", [
    ([0.5, 0.3], [1.0, 0.0], 0.0, [0.0, 0.3]),
    ([0.5, 0.3], [1.0, 0.0], 1.0, [0.5, 0.3]),
    ([3.0, 4.0], [3.0, 4.0], 0.0, [0.0, 0.0]),
])
def test_project_single_examples(f, a, b, expected):
    """Closed-form halfspace projection"""
    assert np.allclose(project_single(f, a, b), expected)

def test_project_single_zero_normal():
    """a = 0 is degenerate"""
    with pytest.raises(DegenerateConstraintException):
        project_single([1.0], [0.0], 1.0)

def test_project_aff_worked_example():
    """C=[1 1], d=1, A=[0 1], b=0.5, f=0.9 gives y=[0.5, 0.5] and a zero Jacobian"""
    ev = ConstraintEval.create(2, A=[[0.0, 1.0]], b=[0.5], C=[[1.0, 1.0]], d=[1.0])
    red = reduce(ev)
    result = project_aff([0.9], red, ev)
    assert np.allclose(result.y, [0.5, 0.5])
    assert result.active_mask.tolist() == [True]
    oracle = kkt_enumeration_oracle(lift(np.array([0.9]), red, ev.d), ev.A, ev.b, ev.C, ev.d)
    assert np.allclose(result.y, oracle.z)
    assert np.allclose(project_aff_backward(result, [1.0, 0.0]), [0.0])
    assert np.allclose(project_aff_backward(result, [0.0, 1.0]), [0.0])

def test_project_aff_feasible_is_unchanged(instance):
    """A reduced point already satisfying every row passes through"""
    ev, y0 = instance
    red = reduce(ev)
    _, f = split_output(y0, red)
    result = project_aff(f, red, ev)
    assert not result.active_mask.any()
    assert np.allclose(result.f_star, f, atol=1e-10)
    assert np.allclose(result.y, y0, atol=1e-10)

def test_project_aff_shape_checked(instance):
    """The reduced input must have n_out - n_eq entries"""
    ev, _ = instance
    with pytest.raises(ShapeMismatchException):
        project_aff(np.zeros(5), reduce(ev), ev)

def test_feasibility_and_row_preservation(rng):
    """On 1000 random instances y is feasible and each row keeps its value or lands on its bound"""
    for _ in range(1000):
        n_out, n_eq, n_ineq = random_sizes(rng)
        ev, _ = make_well_posed(rng, n_out, n_eq, n_ineq)
        red = reduce(ev)
        f = 3.0 * rng.standard_normal(red.n_reduced)
        y = project_aff(f, red, ev).y
        unprojected = lift(f, red, ev.d)
        if n_ineq:
            assert np.all(ev.A @ y <= ev.b + 1e-8)
            expected = np.minimum(ev.A @ unprojected, ev.b)
            assert np.allclose(ev.A @ y, expected, atol=1e-8)
        if n_eq:
            assert np.max(np.abs(ev.C @ y - ev.d)) <= 1e-8

def test_single_halfspace_specialisation(rng):
    """With one inequality and no equalities the layer is the halfspace formula"""
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        a = rng.standard_normal(n)
        b = float(rng.standard_normal())
        ev = ConstraintEval.create(n, A=[a], b=[b])
        f = rng.standard_normal(n)
        y = project_aff(f, reduce(ev), ev).y
        assert np.allclose(y, project_single(f, a, b), atol=1e-10, rtol=0.0)

def test_idempotent(rng):
    """Projecting the reduced part of a projected point returns it unchanged"""
    for _ in range(500):
        n_out, n_eq, n_ineq = random_sizes(rng)
        ev, _ = make_well_posed(rng, n_out, n_eq, n_ineq, max_cond=1e2)
        red = reduce(ev)
        y = project_aff(5.0 * rng.standard_normal(red.n_reduced), red, ev).y
        _, f2 = split_output(y, red)
        assert np.allclose(project_aff(f2, red, ev).y, y, atol=1e-10, rtol=0.0)

def test_error_bound(rng):
    """Distance to any feasible target is within the approximation constant times the reduced error"""
    for _ in range(1000):
        n_out, n_eq, n_ineq = random_sizes(rng)
        ev, target = make_well_posed(rng, n_out, n_eq, n_ineq)
        red = reduce(ev)
        f = target[n_eq:] + rng.standard_normal(red.n_reduced)
        y = project_aff(f, red, ev).y
        _, target2 = split_output(target, red)
        bound = approximation_constant(red) * np.linalg.norm(target2 - f)
        assert np.linalg.norm(target - y) <= bound + 1e-8

def _margin_ok(red, f, margin=1e-3):
    return red.n_ineq == 0 or np.all(np.abs(red.A_tilde @ f - red.b_tilde) > margin)

def test_backward_matches_finite_differences(rng):
    """The analytic VJP agrees with central differences away from kinks"""
    checked = 0
    while checked < 200:
        n_out, n_eq, n_ineq = random_sizes(rng)
        ev, _ = make_well_posed(rng, n_out, n_eq, n_ineq)
        red = reduce(ev)
        f = 2.0 * rng.standard_normal(red.n_reduced)
        if not _margin_ok(red, f):
            continue
        result = project_aff(f, red, ev)
        numeric = finite_diff_jacobian(lambda t: project_aff(t.data.ravel(), red, ev).y, f, h=1e-6).data
        analytic = np.stack([project_aff_backward(result, e) for e in np.eye(n_out)], axis=0)
        scale = max(1.0, np.abs(numeric).max())
        assert np.abs(analytic - numeric).max() <= 1e-4 * scale
        checked += 1

def test_layer_batch_matches_single(rng):
    """The batched layer reproduces per-sample projections"""
    ev, _ = make_instance(rng, 4, 1, 2)
    spec = AffineConstraintSpec(lambda x: ev, n_out=4, n_ineq=2, n_eq=1)
    layer = HardNetAffLayer(spec)
    F = 3.0 * rng.standard_normal((3, 5))
    Y, _ = layer.project_batch(F, [None] * 5)
    red = reduce(ev)
    for j in range(5):
        assert np.allclose(Y[:, j], project_aff(F[:, j], red, ev).y)

def test_constant_matrices_fast_path(rng):
    """Specs with constant matrices give the same answer through the batched path"""
    ev, _ = make_instance(rng, 4, 1, 2)
    d_of = lambda x: ev.d + x[0]
    b_of = lambda x: ev.b + x[0]

    def evaluator(x):
        return ConstraintEval(ev.A, b_of(x), ev.C, d_of(x))

    constant = HardNetAffLayer(AffineConstraintSpec(evaluator, 4, 2, 1, matrices_constant=True))
    general = HardNetAffLayer(AffineConstraintSpec(evaluator, 4, 2, 1))
    xs = [np.array([v]) for v in (-1.0, 0.0, 2.0)]
    F = rng.standard_normal((3, 3))
    Yc, vjp_c = constant.project_batch(F, xs)
    Yg, vjp_g = general.project_batch(F, xs)
    assert np.allclose(Yc, Yg)
    G = rng.standard_normal((4, 3))
    assert np.allclose(vjp_c(G)[0], vjp_g(G)[0])

def test_disabled_layer_only_completes_equalities(rng):
    """With the projection off, equalities still hold and inequalities are left alone"""
    ev, _ = make_instance(rng, 4, 1, 2)
    layer = HardNetAffLayer(AffineConstraintSpec(lambda x: ev, 4, 2, 1))
    F = 10.0 * rng.standard_normal((3, 2))
    Y, _ = layer.project_batch(F, [None, None], enabled=False)
    red = reduce(ev)
    for j in range(2):
        assert np.allclose(Y[:, j], lift(F[:, j], red, ev.d))

def test_end_to_end_gradient(rng):
    """MLP followed by the layer matches finite differences in the last bias"""
    ev, _ = make_instance(rng, 3, 1, 1)
    spec = AffineConstraintSpec(lambda x: ev, 3, 1, 1)
    layer = HardNetAffLayer(spec)
    params = mlp_new([2, 6, 2], seed=4)
    X = rng.standard_normal((2, 3))
    xs = [None] * 3

    def loss(p):
        tape = Tape()
        y = layer.apply(tape, mlp_forward(p, X, tape), xs)
        out = tape.sum(tape.square(y))
        return tape, out

    tape, out = loss(params)
    grads = mlp_gradients(params, tape, backward(tape, np.ones((1, 1)), out))

    def loss_of_bias(b):
        trial = params.copy()
        trial.biases[-1] = b.ravel()
        t, o = loss(trial)
        return t.value(o)

    numeric = finite_diff_jacobian(loss_of_bias, params.biases[-1], h=1e-6).data.ravel()
    assert np.allclose(grads.biases[-1], numeric, rtol=1e-4, atol=1e-6)
