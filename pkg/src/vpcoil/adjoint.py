"""Costate, linearized state and linearized costate sweeps.

The costate is carried on the recorded RK4 stages of the forward run as the
exact discrete adjoint of the particle system, written per particle in
gradient form: ``G_k`` plays the role of the phase-space gradient of the
costate at particle k and obeys

    -dG/dt = A^T G - grad(Phi chi),   Phi_k = sum_j w_j K(x_k - x_j) . G_vj,

while the costate value satisfies ``dg/dt = Phi chi`` along characteristics.
The sweeps start from ``G(T) = -grad f_d`` and ``g(T) = -f_d``; the state
part f(T) is added back analytically (it is inert in the costate equation),
so ``g = f0 + g~`` and ``grad g = J^-T grad f0 + G~``.

The linearized sweeps are the tangent-linear model of the particle system
and the derivative of the adjoint recursion.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StateError
from .kernels import CutoffChi, chi_eval, pair_contract, pair_second_order
from .transport import RK_A, RK_B, StateTrajectory, grad_f


@dataclass
class CostateTrajectory:
    times: np.ndarray
    g_tilde: np.ndarray  # (M+1, n)
    G: np.ndarray  # (M+1, n, 6)
    stage_G: np.ndarray  # (M, 4, n, 6)
    step_moment: np.ndarray  # (M, N): sum over stages of w (v x m_i) . Kbar_v
    state: StateTrajectory
    chi: CutoffChi | None
    fd_terminal: np.ndarray  # f_d at the final particle positions

    @property
    def g(self) -> np.ndarray:
        return self.state.ensemble.f0[None, :] + self.g_tilde

    @property
    def terminal_residual(self) -> float:
        """max |g(T) - (f(T) - f_d)| over particles."""
        return float(np.max(np.abs(self.g[-1] - (self.state.ensemble.f0 - self.fd_terminal))))

    def grad_g(self, step: int = -1) -> np.ndarray:
        return grad_f(self.state, None, step) + self.G[step]

    def Gz0(self, step: int = -1) -> np.ndarray:
        """Gradient of g(t, Z(t, 0, z0)) with respect to z0."""
        J = self.state.J[step]
        return self.state.ensemble.gradf0 + np.einsum("nji,nj->ni", J, self.G[step])


def _stage_fields(state: StateTrajectory, n: int, s: int, u=None):
    u = state.step_u[n] if u is None else u
    B = np.einsum("i,inj->nj", u, state.stage_m[n, s])
    gB = np.einsum("i,injk->njk", u, state.stage_gm[n, s])
    return B, gB


def _chi_at(Y, chi: CutoffChi | None | str):
    n = len(Y)
    if isinstance(chi, str) and chi == "off":
        return np.zeros(n), np.zeros((n, 6))
    if chi is None:
        return np.ones(n), np.zeros((n, 6))
    return chi_eval(Y, chi)


def _adjoint_op(state: StateTrajectory, n: int, s: int, P, chi_v, chi_g):
    """Transposed stage operator applied to P; also returns Phi(P)."""
    Y = state.stage_z[n, s]
    x, v = Y[:, :3], Y[:, 3:]
    w = state.weights
    B, gB = _stage_fields(state, n, s)
    Px, Pv = P[:, :3], P[:, 3:]
    phi, C = pair_contract(x, x, w, state.eps, Pv, np.arange(len(x)))
    out = np.empty_like(P)
    out[:, :3] = (
        np.einsum("nab,nb->na", state.stage_M[n, s], Pv)
        - chi_v[:, None] * C
        + np.einsum("nab,na->nb", gB, np.cross(Pv, v))
        - phi[:, None] * chi_g[:, :3]
    )
    out[:, 3:] = Px + np.cross(B, Pv) - phi[:, None] * chi_g[:, 3:]
    return out, phi


def _moment_terms(state: StateTrajectory, n: int, s: int, Kv):
    Y = state.stage_z[n, s]
    vxm = np.cross(Y[None, :, 3:], state.stage_m[n, s])  # (N, n, 3)
    return np.einsum("k,ikd,kd->i", state.weights, vxm, Kv)


def _check_plateau(state: StateTrajectory, chi):
    if isinstance(chi, CutoffChi):
        r = np.linalg.norm(state.stage_z, axis=-1).max()
        if r > chi.plateau_radius:
            raise StateError(
                f"particles reach |z| = {r:.6g} beyond the cutoff plateau {chi.plateau_radius:.6g}"
            )


def solve_costate(state: StateTrajectory, target, chi: CutoffChi | None | str = None) -> CostateTrajectory:
    """Backward costate sweep on the stages of ``state``.

    ``chi`` defaults to a cutoff with plateau ``state.R_Z``; ``"off"`` switches
    the nonlocal source off (test variant).  With a cutoff given, every
    particle must stay on its plateau.
    """
    if state.stage_z is None or len(state.stage_z) != state.steps:
        raise StateError("state trajectory is incomplete")
    if chi is None:
        chi = CutoffChi(state.R_Z)
    _check_plateau(state, chi)
    M, n = state.steps, state.ensemble.n
    dt = state.dt
    fdT, gfdT = target.evaluate(state.final)
    G = np.empty((M + 1, n, 6))
    gt = np.empty((M + 1, n))
    stage_G = np.empty((M, 4, n, 6))
    step_moment = np.zeros((M, state.fields.n))
    G[M] = -gfdT
    gt[M] = -fdT
    for k in range(M - 1, -1, -1):
        Gn = G[k + 1]
        ybar_sum = np.zeros_like(Gn)
        phi_sum = np.zeros(n)
        ybar_next = None
        for s in range(3, -1, -1):
            Kbar = RK_B[s] * dt * Gn
            if s < 3:
                Kbar = Kbar + RK_A[s + 1] * dt * ybar_next
            stage_G[k, s] = Kbar / (RK_B[s] * dt)
            chi_v, chi_g = _chi_at(state.stage_z[k, s], chi)
            ybar, phi = _adjoint_op(state, k, s, Kbar, chi_v, chi_g)
            ybar_sum += ybar
            phi_sum += chi_v * phi
            step_moment[k] += _moment_terms(state, k, s, Kbar[:, 3:])
            ybar_next = ybar
        G[k] = Gn + ybar_sum
        gt[k] = gt[k + 1] - phi_sum
    return CostateTrajectory(state.times, gt, G, stage_G, step_moment, state, chi, fdT)


def grad_v_g(costate: CostateTrajectory, state: StateTrajectory, k, step: int = -1) -> np.ndarray:
    """Velocity gradient of the costate at particle(s) k after ``step`` steps."""
    if costate.state is not state:
        raise StateError("costate belongs to a different state trajectory")
    return costate.grad_g(step)[k, 3:]


def dump_costate(costate: CostateTrajectory, path) -> None:
    """Columnar text dump ``t k g Gz0_1 .. Gz0_6``."""
    n = costate.state.ensemble.n
    with open(Path(path), "w") as fh:
        fh.write("t k g Gz0_1 Gz0_2 Gz0_3 Gz0_4 Gz0_5 Gz0_6\n")
        for step, t in enumerate(costate.times):
            g = costate.g[step]
            gz = costate.Gz0(step)
            for k in range(n):
                fh.write(" ".join([repr(float(t)), str(k), repr(float(g[k]))] + [repr(float(c)) for c in gz[k]]) + "\n")


# ---------------------------------------------------------------------------
# linearized state


def _direction(h, state: StateTrajectory) -> np.ndarray:
    h = np.asarray(getattr(h, "values", h), dtype=float)
    if h.shape != state.control.values.shape:
        raise StateError(f"direction shape {h.shape} does not match control grid {state.control.values.shape}")
    return h


@dataclass
class LinearizedState:
    dz: np.ndarray  # (M+1, n, 6)
    stage_dz: np.ndarray  # (M, 4, n, 6)
    fprime: np.ndarray  # (M+1, n)
    h: np.ndarray


def _tlm_op(state: StateTrajectory, n: int, s: int, dY, hn):
    Y = state.stage_z[n, s]
    x, v = Y[:, :3], Y[:, 3:]
    B, gB = _stage_fields(state, n, s)
    Bh = np.einsum("i,inj->nj", hn, state.stage_m[n, s])
    dx, dv = dY[:, :3], dY[:, 3:]
    _, C = pair_contract(x, x, state.weights, state.eps, dx, np.arange(len(x)))
    out = np.empty_like(dY)
    out[:, :3] = dv
    out[:, 3:] = (
        np.einsum("nab,nb->na", state.stage_M[n, s], dx) - C
        + np.cross(dv, B)
        + np.cross(v, np.einsum("nab,nb->na", gB, dx))
        + np.cross(v, Bh)
    )
    return out


def solve_linearized_state(state: StateTrajectory, h) -> LinearizedState:
    """Tangent-linear sweep for a control direction ``h`` (array or ControlGrid)."""
    h = _direction(h, state)
    M, n = state.steps, state.ensemble.n
    dt = state.dt
    dZ = np.zeros((M + 1, n, 6))
    sdz = np.empty((M, 4, n, 6))
    for k in range(M):
        hn = h[:, state.step_interval[k]]
        acc = np.zeros((n, 6))
        kd = None
        for s in range(4):
            dY = dZ[k] if s == 0 else dZ[k] + RK_A[s] * dt * kd
            sdz[k, s] = dY
            kd = _tlm_op(state, k, s, dY, hn)
            acc += RK_B[s] * kd
        dZ[k + 1] = dZ[k] + dt * acc
    fprime = np.empty((M + 1, n))
    for k in range(M + 1):
        fprime[k] = -np.einsum("ni,ni->n", grad_f(state, None, k), dZ[k])
    return LinearizedState(dZ, sdz, fprime, h)


# ---------------------------------------------------------------------------
# linearized costate


@dataclass
class LinearizedCostate:
    dG: np.ndarray  # (M+1, n, 6)
    dg_tilde: np.ndarray  # (M+1, n)
    gprime: np.ndarray  # (M+1, n)
    step_hess: np.ndarray  # (M, N): derivative of the step moments
    h: np.ndarray


def _adjoint_op_dot(state: StateTrajectory, n: int, s: int, P, dP, dY, hn, hess_m, chi_v):
    """Derivative of (A^T P, Phi(P)) along (dY, h, dP); cutoff held at its plateau."""
    Y = state.stage_z[n, s]
    x, v = Y[:, :3], Y[:, 3:]
    dx, dv = dY[:, :3], dY[:, 3:]
    u = state.step_u[n]
    w = state.weights
    B, gB = _stage_fields(state, n, s)
    Bh, gBh = _stage_fields(state, n, s, hn)
    hB = np.einsum("i,injkl->njkl", u, hess_m)
    Pv = P[:, 3:]
    sidx = np.arange(len(x))
    base, _ = _adjoint_op(state, n, s, dP, chi_v, np.zeros((len(x), 6)))
    sec, dphi = pair_second_order(x, x, w, state.eps, dx, dx, Pv, Pv, chi_v, Pv, dP[:, 3:], sidx)
    pxv = np.cross(Pv, v)
    out = base
    out[:, :3] += (
        sec
        + np.einsum("na,nabc,nc->nb", pxv, hB, dx)
        + np.einsum("nab,na->nb", gB, np.cross(Pv, dv))
        + np.einsum("nab,na->nb", gBh, pxv)
    )
    out[:, 3:] += np.cross(np.einsum("nab,nb->na", gB, dx) + Bh, Pv)
    return out, dphi


def solve_linearized_costate(state: StateTrajectory, costate: CostateTrajectory, linstate: LinearizedState,
                             h, target) -> LinearizedCostate:
    """Derivative of the costate sweep along the control direction ``h``."""
    h = _direction(h, state)
    if costate.state is not state or linstate.dz.shape[0] != state.steps + 1:
        raise StateError("trajectories are not aligned")
    if not np.array_equal(h, linstate.h):
        raise StateError("linearized state belongs to a different direction")
    chi = costate.chi
    M, n = state.steps, state.ensemble.n
    dt = state.dt
    dzT = linstate.dz[-1]
    _, gfdT = target.evaluate(state.final)
    dG = np.empty((M + 1, n, 6))
    dgt = np.empty((M + 1, n))
    dG[M] = -target.hessp(state.final, dzT)
    dgt[M] = -np.einsum("ni,ni->n", gfdT, dzT)
    step_hess = np.zeros((M, state.fields.n))
    for k in range(M - 1, -1, -1):
        hn = h[:, state.step_interval[k]]
        dGn = dG[k + 1]
        acc = np.zeros_like(dGn)
        dphi_sum = np.zeros(n)
        dybar_next = None
        for s in range(3, -1, -1):
            Kbar = RK_B[s] * dt * costate.stage_G[k, s]
            dKbar = RK_B[s] * dt * dGn
            if s < 3:
                dKbar = dKbar + RK_A[s + 1] * dt * dybar_next
            Y = state.stage_z[k, s]
            dY = linstate.stage_dz[k, s]
            chi_v, _ = _chi_at(Y, chi)
            hess_m = state.fields.evaluate(Y[:, :3], order=2).hess
            dybar, dphi = _adjoint_op_dot(state, k, s, Kbar, dKbar, dY, hn, hess_m, chi_v)
            acc += dybar
            dphi_sum += chi_v * dphi
            # derivative of the moment terms
            vxm = np.cross(Y[None, :, 3:], state.stage_m[k, s])
            dvxm = np.cross(dY[None, :, 3:], state.stage_m[k, s]) + np.cross(
                Y[None, :, 3:], np.einsum("inab,nb->ina", state.stage_gm[k, s], dY[:, :3])
            )
            step_hess[k] += np.einsum("k,ikd,kd->i", state.weights, vxm, dKbar[:, 3:])
            step_hess[k] += np.einsum("k,ikd,kd->i", state.weights, dvxm, Kbar[:, 3:])
            dybar_next = dybar
        dG[k] = dGn + acc
        dgt[k] = dgt[k + 1] - dphi_sum
    gprime = np.empty((M + 1, n))
    for k in range(M + 1):
        fp = linstate.fprime[k]
        gprime[k] = dgt[k] + fp - np.einsum("ni,ni->n", costate.G[k], linstate.dz[k])
    return LinearizedCostate(dG, dgt, gprime, step_hess, h)
