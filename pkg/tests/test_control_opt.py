import numpy as np
import pytest

from vpcoil.control import ControlGrid, project_box
from vpcoil.errors import PreconditionError
from vpcoil.optimality import (
    critical_cone_project,
    kkt_extract,
    nc2_residual,
    optimality_residual,
    ssc_sample_check,
    uniqueness_probe,
    variational_inequality_check,
)
from vpcoil.problem import ControlProblem, gradient
from vpcoil.solvers import PGDOptions, fixed_point_sweep, projected_gradient_descent, projected_gradient_residual
from vpcoil.targets import ReferenceTarget, ZeroTarget

U = np.array([[0.1, -0.05], [0.12, 0.03], [-0.08, 0.14]])


def with_target(problem, target, lam=None):
    return ControlProblem(problem.ensemble, problem.fields, target, problem.lam if lam is None else lam, problem.grid,
                          problem.steps, problem.eps)


def test_project_box(rng):
    assert project_box(2.0, -1.0, 1.0) == 1.0
    assert project_box(0.0, -1.0, 1.0) == 0.0
    assert project_box(-3.0, -1.0, 1.0) == -1.0
    assert project_box(0.4, 0.0, 0.0) == 0.0
    x, y = rng.normal(scale=2, size=(2, 50))
    d = np.abs(project_box(x, -1, 1) - project_box(y, -1, 1))
    assert np.all(d <= np.abs(x - y))
    with pytest.raises(PreconditionError):
        project_box(0.0, 1.0, -1.0)


def test_control_grid_basics():
    g = ControlGrid(np.array([[1.0, 2.0, 3.0, 4.0]]), -5, 5, 2.0)
    assert g.dt == 0.5
    np.testing.assert_allclose(g.t_mid, [0.25, 0.75, 1.25, 1.75])
    assert g.interval_of(0.0) == 0 and g.interval_of(0.5) == 1 and g.interval_of(2.0) == 3
    assert g.at(1.9)[0] == 4.0
    assert g.norm() == pytest.approx(np.sqrt(0.5 * 30))
    assert not g.with_values([[6.0, 0, 0, 0]]).is_admissible()
    assert g.with_values([[6.0, 0, 0, 0]]).projected().values[0, 0] == 5.0
    with pytest.raises(PreconditionError):
        ControlGrid.zeros(1, 2, 0.0)
    with pytest.raises(PreconditionError, match="a_i <= 0 <= b_i"):
        ControlGrid.zeros(1, 2, 1.0, lower=0.1, upper=1.0)
    with pytest.raises(PreconditionError):
        ControlGrid(np.zeros((2, 3)), [0.0, 0.0, 0.0], 1.0, 1.0)


def test_kkt_examples():
    g = ControlGrid(np.array([[0.0, -1.0, 1.0]]), -1.0, 1.0, 3.0)
    grad = np.array([[0.0, 0.7, -0.4]])
    k = kkt_extract(g, grad)
    np.testing.assert_array_equal(k.mu_a, [[0.0, 0.7, 0.0]])
    np.testing.assert_array_equal(k.mu_b, [[0.0, 0.0, 0.4]])
    assert k.max_residual == 0.0
    # interior nonzero gradient is not stationary
    k2 = kkt_extract(g, np.array([[0.3, 0.7, -0.4]]))
    assert k2.stationarity == pytest.approx(0.3)
    assert np.all(k2.mu_a >= 0) and np.all(k2.mu_b >= 0)


def test_nc2_residual():
    g = ControlGrid(np.array([[0.5, 1.0]]), -1.0, 1.0, 2.0)
    np.testing.assert_allclose(nc2_residual(g, np.array([[1.0, 4.0]]), 2.0), [0.0])
    with pytest.raises(PreconditionError):
        nc2_residual(g, np.zeros((1, 2)), 0.0)


def test_variational_inequality_examples():
    g = ControlGrid(np.array([[-1.0, 0.2]]), -1.0, 1.0, 2.0)
    grad = np.array([[0.5, 0.0]])
    vals = variational_inequality_check(g, grad, n_dirs=16, samples=[g.values])
    assert vals[0] == 0.0 and vals.min() >= 0.0
    assert np.all(variational_inequality_check(g, np.zeros((1, 2)), 8) == 0.0)
    # a wrong sign at the bound shows up as a negative pairing
    assert variational_inequality_check(g, -grad, 8).min() < 0.0


def test_critical_cone_projection(rng):
    g = ControlGrid(np.array([[-1.0, -1.0, 0.3, 1.0]]), -1.0, 1.0, 4.0)
    grad = np.array([[0.5, 0.0, 0.0, 0.0]])
    h = rng.normal(size=(1, 4))
    ph = critical_cone_project(h, g, grad, 1e-9)
    assert ph[0, 0] == 0.0  # strongly active
    assert ph[0, 1] == max(h[0, 1], 0.0)  # weakly active at a
    assert ph[0, 2] == h[0, 2]  # inactive
    assert ph[0, 3] == min(h[0, 3], 0.0)  # weakly active at b
    np.testing.assert_array_equal(critical_cone_project(ph, g, grad, 1e-9), ph)


def test_ssc_trivial_cone(small_problem):
    res = ssc_sample_check(U, small_problem, n_dirs=0)
    assert res.n_used == 0 and "holds trivially" in res.notice


def test_ssc_reached_target(default_sc):
    """At a reached target the second derivative is lambda ||h||^2 + ||f'(T)||^2.

    64 particles resolve the second term too coarsely for the bound, so this
    runs at the default resolution.
    """
    sc = default_sc.replace(steps=8, intervals=2, reference_control=(0.0,))
    base = sc.problem()
    u = np.zeros((3, 2))
    tgt = ReferenceTarget(sc.initial_profile(), base.ensemble, base.fields, base.control(u), sc.T, sc.steps, base.eps)
    prob = with_target(base, tgt)
    res = ssc_sample_check(u, prob, n_dirs=3, seed=3)
    assert res.n_used == 3
    assert res.min_quotient >= prob.lam.min()


def test_fixed_point_preconditions(small_problem):
    with pytest.raises(PreconditionError) as exc:
        fixed_point_sweep(U, with_target(small_problem, small_problem.target, lam=0.0))
    assert str(exc.value) == ("fixed_point_sweep needs lambda_i > 0 for every coil; "
                              "use projected_gradient_descent for lambda_i = 0")
    for theta in (0.0, 1.5):
        with pytest.raises(PreconditionError):
            fixed_point_sweep(U, small_problem, theta=theta)
    with pytest.raises(PreconditionError):
        fixed_point_sweep(np.full(U.shape, 0.3), small_problem)


def test_fixed_point_at_solution(small_problem):
    prob = with_target(small_problem, ZeroTarget())
    u, hist = fixed_point_sweep(np.zeros_like(U), prob)
    assert hist.converged and len(hist) == 1 and hist.records[0].grad_norm == 0.0
    np.testing.assert_array_equal(u.values, 0.0)


def test_fixed_point_and_pgd_agree(small_problem):
    prob = with_target(small_problem, small_problem.target, lam=5.0)
    uf, hf = fixed_point_sweep(np.zeros_like(U), prob, theta=0.8, tol=1e-10)
    assert hf.converged
    up, hp = projected_gradient_descent(np.zeros_like(U), prob, PGDOptions(tol=1e-9, bb_step=True))
    assert hp.converged
    assert prob.grid.norm(uf.values - up.values) <= 1e-6
    g, p = gradient(uf, prob)
    assert nc2_residual(uf, p, prob.lam).max() <= 1e-9
    assert projected_gradient_residual(uf, g) <= 1e-8


def test_pgd_stationary_start(small_problem):
    prob = with_target(small_problem, ZeroTarget())
    u, hist = projected_gradient_descent(np.zeros_like(U), prob)
    assert hist.converged and len(hist) == 1 and hist.records[0].iter == 0
    with pytest.raises(PreconditionError):
        projected_gradient_descent(np.full(U.shape, 0.3), small_problem)


def test_pgd_decreases_cost(small_problem):
    u, hist = projected_gradient_descent(np.zeros_like(U), small_problem, PGDOptions(max_iter=6))
    J = hist.J
    assert np.all(np.diff(J) < 0)
    assert hist.records[-1].step == 0.0
    assert u.is_admissible()


def test_uniqueness_probe_single_start(small_problem):
    prob = with_target(small_problem, small_problem.target, lam=5.0)
    res = uniqueness_probe(prob, n_starts=1, tol=1e-10)
    assert res.max_distance == 0.0 and res.converged


def test_optimality_residual(small_problem):
    res = optimality_residual(U, small_problem)
    assert res.state["liouville"] <= 1e-6
    assert res.state["l2_drift"] <= 1e-12
    assert res.costate["terminal"] == 0.0
    assert res.costate["chi_independence"] <= 1e-6
    g, p = gradient(U, small_problem)
    np.testing.assert_allclose(res.control, nc2_residual(small_problem.control(U), p, small_problem.lam))
