"""Cost functional, moments, gradient and second derivative on the control grid.

    J(u) = 1/2 ||f(T) - f_d||^2 + sum_i lambda_i / 2 ||u_i||^2

The tracking term uses volume preservation,
``||f(T) - f_d||^2 = ||f0||^2 - 2 sum_k w_k f_d(z_k(T)) + ||f_d||^2``.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .adjoint import (
    CostateTrajectory,
    solve_costate,
    solve_linearized_costate,
    solve_linearized_state,
)
from .coils import CoilFieldSet
from .control import ControlGrid
from .errors import PreconditionError
from .kernels import CutoffChi
from .transport import ParticleEnsemble, StateTrajectory, integrate_forward


@dataclass
class ControlProblem:
    """A discretized instance of the optimal control problem."""

    ensemble: ParticleEnsemble
    fields: CoilFieldSet
    target: object
    lam: np.ndarray
    grid: ControlGrid  # bounds and horizon; values are ignored
    steps: int
    eps: float
    chi_factor: float = 1.0
    cache_size: int = 6
    _states: OrderedDict = field(default_factory=OrderedDict, repr=False)
    _costates: OrderedDict = field(default_factory=OrderedDict, repr=False)

    def __post_init__(self):
        self.lam = np.broadcast_to(np.asarray(self.lam, dtype=float), (self.grid.n_coils,)).copy()
        if np.any(self.lam < 0):
            raise PreconditionError("regularization weights must be >= 0")
        if self.grid.n_coils != self.fields.n:
            raise PreconditionError("control grid and coil set disagree on N")
        if self.steps % self.grid.n_intervals:
            raise PreconditionError("time steps must be a multiple of the control intervals")

    @property
    def T(self) -> float:
        return self.grid.T

    @property
    def f0_norm_sq(self) -> float:
        return float(np.sum(self.ensemble.cell_volume * self.ensemble.f0**2))

    def control(self, values) -> ControlGrid:
        return self.grid.with_values(getattr(values, "values", values))

    def _key(self, u) -> bytes:
        return np.ascontiguousarray(np.asarray(getattr(u, "values", u), dtype=float)).tobytes()

    def _remember(self, cache: OrderedDict, key, value):
        cache[key] = value
        if len(cache) > self.cache_size:
            cache.popitem(last=False)

    def state(self, u) -> StateTrajectory:
        key = self._key(u)
        if key in self._states:
            self._states.move_to_end(key)
            return self._states[key]
        if key in self._costates:
            # keep state and costate paired when only the state was evicted
            st = self._costates[key].state
            self._remember(self._states, key, st)
            return st
        st = integrate_forward(self.ensemble, self.control(u), self.fields, self.T, self.steps, self.eps)
        self._remember(self._states, key, st)
        return st

    def cutoff(self, state: StateTrajectory) -> CutoffChi:
        return CutoffChi(self.chi_factor * state.R_Z)

    def costate(self, u) -> CostateTrajectory:
        key = self._key(u)
        if key in self._costates:
            self._costates.move_to_end(key)
            return self._costates[key]
        st = self.state(u)
        cs = solve_costate(st, self.target, self.cutoff(st))
        self._remember(self._costates, key, cs)
        return cs


def _check_admissible(problem: ControlProblem, u: ControlGrid):
    if not u.is_admissible():
        raise PreconditionError("control violates its bounds")


def tracking_term(problem: ControlProblem, state: StateTrajectory) -> float:
    fd, _ = problem.target.evaluate(state.final)
    cross = float(np.sum(problem.ensemble.w * fd))
    return 0.5 * (problem.f0_norm_sq - 2.0 * cross + problem.target.norm_sq())


def regularization_term(problem: ControlProblem, u: ControlGrid) -> float:
    return float(0.5 * np.sum(problem.lam * np.sum(u.values**2, axis=1)) * u.dt)


def evaluate_cost(u, problem: ControlProblem) -> tuple[float, StateTrajectory]:
    """Cost ``J(u)`` and the forward trajectory it was computed from."""
    u = problem.control(u)
    _check_admissible(problem, u)
    st = problem.state(u)
    return tracking_term(problem, st) + regularization_term(problem, u), st


def moment_p(state: StateTrajectory, costate: CostateTrajectory, fields: CoilFieldSet | None = None) -> np.ndarray:
    """Moments ``p[i, m]`` averaged over each control interval."""
    if costate.state is not state:
        raise PreconditionError("costate belongs to a different state")
    grid = state.control
    p = np.zeros((state.fields.n, grid.n_intervals))
    np.add.at(p.T, state.step_interval, costate.step_moment)
    return -p / grid.dt


def moment_quadrature(z, weights, m, grad_v_g) -> np.ndarray:
    """``-sum_k w_k (v_k x m_i(x_k)) . (grad_v g)_k`` for field shapes ``m`` of shape (N, n, 3).

    This is the particle rule for the pairing of ``(v x m_i) . grad_v f`` with
    g after moving the velocity derivative onto g.
    """
    z = np.asarray(z, dtype=float).reshape(-1, 6)
    vxm = np.cross(z[None, :, 3:], np.asarray(m, dtype=float))
    return -np.einsum("k,ikd,kd->i", np.asarray(weights, dtype=float), vxm, np.asarray(grad_v_g, dtype=float))


def moment_pointwise(state: StateTrajectory, costate: CostateTrajectory) -> np.ndarray:
    """``p_i(t_n) = -sum_k w_k (v_k x m_i(x_k)) . (grad_v g~)_k`` at every step time."""
    out = np.empty((state.steps + 1, state.fields.n))
    for n in range(state.steps + 1):
        z = state.z[n]
        m = state.stage_m[n, 0] if n < state.steps else state.fields.evaluate(z[:, :3]).m
        out[n] = moment_quadrature(z, state.weights, m, costate.G[n][:, 3:])
    return out


def gradient(u, problem: ControlProblem) -> tuple[np.ndarray, np.ndarray]:
    """L2 gradient ``lambda_i u_i - p_i`` on the control grid, and ``p``."""
    u = problem.control(u)
    _check_admissible(problem, u)
    st = problem.state(u)
    cs = problem.costate(u)
    p = moment_p(st, cs)
    return problem.lam[:, None] * u.values - p, p


def hessian_vector(u, h_tilde, problem: ControlProblem) -> np.ndarray:
    """L2 representative of ``J''(u)[., h_tilde]`` on the control grid."""
    u = problem.control(u)
    ht = np.asarray(getattr(h_tilde, "values", h_tilde), dtype=float)
    st = problem.state(u)
    cs = problem.costate(u)
    ls = solve_linearized_state(st, ht)
    lc = solve_linearized_costate(st, cs, ls, ht, problem.target)
    hv = np.zeros_like(ht)
    np.add.at(hv.T, st.step_interval, lc.step_hess)
    return problem.lam[:, None] * ht + hv / u.dt


def second_derivative(u, h, h_tilde, problem: ControlProblem) -> float:
    """Bilinear form ``J''(u)[h, h_tilde]``."""
    u = problem.control(u)
    h = np.asarray(getattr(h, "values", h), dtype=float)
    return u.inner(h, hessian_vector(u, h_tilde, problem))
