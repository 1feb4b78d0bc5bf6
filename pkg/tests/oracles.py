"""Independent finite-difference oracles shared by the tests."""

import numpy as np

from vpcoil.transport import advect_tracers


def pull_back(traj, y, z_init, iters=8):
    """Initial points whose images under ``traj`` are ``y`` (Newton on tracers)."""
    z = np.array(z_init, dtype=float)
    for _ in range(iters):
        tr = advect_tracers(traj, z)
        r = tr.z - y
        z = z - np.linalg.solve(tr.J, r[..., None])[..., 0]
    return z, float(np.abs(r).max())


def linearized_fd_errors(problem, profile, u, h, alphas=(1e-1, 1e-2, 1e-3)):
    """Relative errors of f' and g' against re-simulation quotients.

    f'(T) is compared on the base particle positions z_k(T): the perturbed
    value there is f0 at the perturbed foot point, found by Newton.  g' is
    compared at t = 0 where both runs start on the same particles.
    """
    from vpcoil.adjoint import solve_linearized_costate, solve_linearized_state

    st = problem.state(u)
    cs = problem.costate(u)
    ls = solve_linearized_state(st, h)
    lc = solve_linearized_costate(st, cs, ls, h, problem.target)
    ens = problem.ensemble
    fscale = np.abs(ls.fprime[-1]).max()
    gscale = np.abs(lc.gprime[0]).max()
    e_state, e_costate = [], []
    for a in alphas:
        up = u + a * h
        z0p, _ = pull_back(problem.state(up), st.final, ens.z0)
        fd_f = (profile.value(z0p) - ens.f0) / a
        fd_g = (problem.costate(up).g[0] - cs.g[0]) / a
        e_state.append(np.abs(fd_f - ls.fprime[-1]).max() / fscale)
        e_costate.append(np.abs(fd_g - lc.gprime[0]).max() / gscale)
    return np.array(e_state), np.array(e_costate)


def second_difference(problem, u, h, alpha):
    from vpcoil.problem import evaluate_cost

    jp, _ = evaluate_cost(u + alpha * h, problem)
    j0, _ = evaluate_cost(u, problem)
    jm, _ = evaluate_cost(u - alpha * h, problem)
    return (jp - 2.0 * j0 + jm) / alpha**2
