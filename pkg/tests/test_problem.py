import numpy as np
import pytest

from oracles import second_difference
from vpcoil.coils import CoilFieldSet, CoilGeometry
from vpcoil.control import ControlGrid
from vpcoil.errors import PreconditionError
from vpcoil.problem import (
    ControlProblem,
    evaluate_cost,
    gradient,
    hessian_vector,
    moment_p,
    moment_pointwise,
    regularization_term,
    second_derivative,
    tracking_term,
)
from vpcoil.profiles import BumpProfile
from vpcoil.targets import AnalyticTarget, ZeroTarget
from vpcoil.transport import sample_initial

U = np.array([[0.1, -0.05], [0.12, 0.03], [-0.08, 0.14]])
H = np.array([[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]])
H2 = np.array([[-0.1, 0.4], [0.25, -0.3], [0.2, 0.1]])


def with_target(problem, target, lam=None):
    return ControlProblem(problem.ensemble, problem.fields, target, problem.lam if lam is None else lam, problem.grid,
                          problem.steps, problem.eps)


def test_profile_norms_and_derivatives(rng):
    prof = BumpProfile(2.0, (0.1, 0.0, -0.2), (0.3, 0.1, 0.0), 0.7, 0.9)
    assert prof.lp_norm(np.inf) == 2.0
    ens = sample_initial(prof, 10, max_particles=None)
    for p in (1.0, 2.0):
        q = np.sum(ens.cell_volume * ens.f0**p) ** (1 / p)
        assert q == pytest.approx(prof.lp_norm(p), rel=1e-2)
    z = prof.center + rng.uniform(-0.4, 0.4, (20, 6))
    h = 1e-6
    fdg = np.stack([(prof.value(z + h * e) - prof.value(z - h * e)) / (2 * h) for e in np.eye(6)], -1)
    np.testing.assert_allclose(prof.grad(z), fdg, rtol=1e-6, atol=1e-8)
    fdh = np.stack([(prof.grad(z + h * e) - prof.grad(z - h * e)) / (2 * h) for e in np.eye(6)], -1)
    np.testing.assert_allclose(prof.hess(z), fdh, rtol=1e-5, atol=1e-7)
    lo, hi = prof.support_box()
    far = hi + 0.01
    assert prof.value(far) == 0.0
    assert np.linalg.norm(ens.z0, axis=1).max() <= prof.support_radius()
    with pytest.raises(ValueError):
        BumpProfile(-1.0)


def test_zero_target_cost(small_problem, rng):
    prob = with_target(small_problem, ZeroTarget())
    for _ in range(3):
        u = rng.uniform(-0.15, 0.15, U.shape)
        st = prob.state(u)
        assert 2 * tracking_term(prob, st) == pytest.approx(prob.f0_norm_sq, rel=1e-15)
    g, p = gradient(U, prob)
    assert np.all(p == 0.0)
    np.testing.assert_array_equal(g, prob.lam[:, None] * U)


def test_reference_control_cost(default_sc, default_problem):
    """J(u*) - regularization is the discretization residual of the inverse scenario."""
    ustar = default_sc.reference_grid()
    prob = ControlProblem(default_problem.ensemble, default_problem.fields, default_problem.target,
                          default_problem.lam, ControlGrid(ustar.values, -np.inf, np.inf, ustar.T),
                          default_problem.steps, default_problem.eps)
    J, st = evaluate_cost(ustar.values, prob)
    resid = J - regularization_term(prob, ustar)
    assert abs(resid) <= 1e-4 * prob.f0_norm_sq


def test_short_horizon_cost(default_sc):
    """f_d = f0 and T -> 0: J(0) -> 0 up to the quadrature offset of ||f_d||^2."""
    prof = default_sc.initial_profile()
    out = []
    for T in (2e-3, 1e-3):
        sc = default_sc.replace(T=T, steps=4, intervals=1, target_mode="analytic", reference_control=())
        base = sc.problem()
        prob = with_target(base, AnalyticTarget(prof))
        J, _ = evaluate_cost(np.zeros((3, 1)), prob)
        offset = 0.5 * (prof.lp_norm(2.0) ** 2 - prob.f0_norm_sq)
        out.append(J - offset)
    assert abs(out[1]) <= 1e-3 * prob.f0_norm_sq
    assert abs(out[1]) < abs(out[0])


def test_cost_rejects_inadmissible(small_problem):
    with pytest.raises(PreconditionError):
        evaluate_cost(np.full(U.shape, 0.2), small_problem)


def test_zero_amplitude_coil_has_zero_moment(small_problem):
    coils = list(small_problem.fields.coils[:2]) + [CoilGeometry.circle(1.0, 24, center=(2.2, 0, 0), axis="x",
                                                                        amplitude=0.0)]
    fs = CoilFieldSet(coils)
    prob = ControlProblem(small_problem.ensemble, fs, small_problem.target, small_problem.lam, small_problem.grid,
                          small_problem.steps, small_problem.eps)
    st, cs = prob.state(U), prob.costate(U)
    p = moment_p(st, cs)
    assert np.all(p[2] == 0.0) and np.any(p[:2] != 0.0)
    assert np.all(moment_pointwise(st, cs)[:, 2] == 0.0)


def test_moment_average_matches_pointwise(small_problem):
    """The cell average of p is close to the mean of its step samples."""
    st, cs = small_problem.state(U), small_problem.costate(U)
    p = moment_p(st, cs)
    pt = moment_pointwise(st, cs)
    n_per = st.steps // st.control.n_intervals
    for m in range(st.control.n_intervals):
        seg = pt[m * n_per:(m + 1) * n_per + 1]
        trap = (seg[1:] + seg[:-1]).sum(axis=0) / (2 * n_per)
        np.testing.assert_allclose(p[:, m], trap, rtol=0.05, atol=0.05 * np.abs(p).max())


def test_gradient_directional_fd(small_problem, rng):
    grid = small_problem.grid
    for _ in range(3):
        u = rng.uniform(-0.1, 0.1, U.shape)
        h = rng.normal(size=U.shape)
        a = 1e-3 * 0.04 / np.abs(h).max()
        g, _ = gradient(u, small_problem)
        fd = (evaluate_cost(u + a * h, small_problem)[0] - evaluate_cost(u - a * h, small_problem)[0]) / (2 * a)
        assert abs(grid.inner(g, h) - fd) <= 1e-3 * abs(fd)


def test_second_derivative(small_problem):
    assert second_derivative(U, H, np.zeros_like(H), small_problem) == 0.0
    a, b = second_derivative(U, H, H2, small_problem), second_derivative(U, H2, H, small_problem)
    assert abs(a - b) <= 1e-6 * max(abs(a), abs(b))
    # Hessian-vector product against a central difference of the gradient
    e = 1e-4
    fd = (gradient(U + e * H2, small_problem)[0] - gradient(U - e * H2, small_problem)[0]) / (2 * e)
    hv = hessian_vector(U, H2, small_problem)
    np.testing.assert_allclose(hv, fd, rtol=1e-4, atol=1e-6 * np.abs(fd).max())


def test_second_difference_converges(small_problem):
    h = 0.05 * H  # keeps U +- alpha h inside the +-0.15 box
    exact = second_derivative(U, h, h, small_problem)
    errs = [abs(second_difference(small_problem, U, h, a) - exact) for a in (0.8, 0.4, 0.2)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] <= 1e-2 * abs(exact)


def test_problem_validation(small_problem):
    with pytest.raises(PreconditionError):
        ControlProblem(small_problem.ensemble, small_problem.fields, ZeroTarget(), -1.0, small_problem.grid, 8, 0.5)
    with pytest.raises(PreconditionError):
        ControlProblem(small_problem.ensemble, small_problem.fields, ZeroTarget(), 1.0, small_problem.grid, 7, 0.5)


def test_state_and_costate_stay_paired_after_eviction(small_sc):
    prob = small_sc.problem()
    prob.cache_size = 2
    cs = prob.costate(U)
    for k in range(3):
        prob.state(np.full(U.shape, 0.01 * k))
    assert prob.state(U) is cs.state
    hessian_vector(U, H, prob)
