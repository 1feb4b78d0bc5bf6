"""Particle transport along the characteristics of the controlled Vlasov equation.

Particles carry phase points z_k = (x_k, v_k), exact values f0_k of the
initial datum and flow Jacobians J_k.  The characteristic field is

    dx/dt = v,   dv/dt = sum_j w_j K(x - x_j) + v x B(u)(x)

and J solves dJ/dt = A J with A = [[0, I], [grad a + [v]_x grad B, -[B]_x]],
where ``grad a`` is the gradient of the softened self-field at the particle.
All stage states are recorded so the adjoint sweeps can replay them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .coils import CoilFieldSet, FieldValues
from .control import ControlGrid
from .errors import ConfigurationError, IntegrationError, PreconditionError
from .kernels import pair_field, pair_gradient_derivative
from .profiles import BumpProfile

RK_A = (0.0, 0.5, 0.5, 1.0)
RK_B = (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices, ``skew(v) @ y == v x y`` for stacked 3-vectors."""
    v = np.asarray(v, dtype=float)
    S = np.zeros(v.shape + (3,))
    S[..., 0, 1], S[..., 0, 2] = -v[..., 2], v[..., 1]
    S[..., 1, 0], S[..., 1, 2] = v[..., 2], -v[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -v[..., 1], v[..., 0]
    return S


@dataclass
class ParticleEnsemble:
    """Phase-space quadrature points of the initial datum."""

    z0: np.ndarray
    f0: np.ndarray
    w: np.ndarray
    gradf0: np.ndarray
    cell_volume: float
    spacing: tuple[float, float] = (1.0, 1.0)
    z: np.ndarray | None = None
    J: np.ndarray | None = None

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=float).reshape(-1, 6)
        n = len(self.z0)
        self.f0 = np.asarray(self.f0, dtype=float).reshape(n)
        self.w = np.asarray(self.w, dtype=float).reshape(n)
        self.gradf0 = np.asarray(self.gradf0, dtype=float).reshape(n, 6)
        if np.any(self.w < 0):
            raise PreconditionError("particle weights must be >= 0")
        if self.z is None:
            self.z = self.z0.copy()
        if self.J is None:
            self.J = np.broadcast_to(np.eye(6), (n, 6, 6)).copy()

    @property
    def n(self) -> int:
        return len(self.z0)

    @property
    def positions(self) -> np.ndarray:
        return self.z[:, :3]

    def restarted(self, z) -> "ParticleEnsemble":
        """Same particles and weights with a new current state and J = I."""
        return replace(self, z=np.array(z, dtype=float), J=None)


def sample_initial(profile: BumpProfile, resolution: int, max_particles: int | None = 4096) -> ParticleEnsemble:
    """Midpoint-rule particles on a uniform grid over the support box of ``profile``.

    ``resolution`` cells per axis are used in each of the six directions;
    points where the profile vanishes are dropped.
    """
    n = int(resolution)
    if n < 1:
        raise ConfigurationError("resolution must be >= 1")
    hx = 2.0 * profile.radius_x / n
    hv = 2.0 * profile.radius_v / n
    off = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    g = np.stack(np.meshgrid(off, off, off, indexing="ij"), axis=-1).reshape(-1, 3)
    inside = np.einsum("ij,ij->i", g, g) < 1.0
    g = g[inside]
    xs = np.asarray(profile.center_x) + profile.radius_x * g
    vs = np.asarray(profile.center_v) + profile.radius_v * g
    z0 = np.concatenate([np.repeat(xs, len(vs), axis=0), np.tile(vs, (len(xs), 1))], axis=1)
    f0 = profile.value(z0)
    keep = f0 > 0
    z0, f0 = z0[keep], f0[keep]
    if len(z0) == 0:
        raise ConfigurationError("initial datum vanishes on the sampling grid")
    if max_particles is not None and len(z0) > max_particles:
        raise ConfigurationError(f"{len(z0)} particles exceed the cap of {max_particles}")
    vol = hx**3 * hv**3
    return ParticleEnsemble(z0, f0, f0 * vol, profile.grad(z0), vol, (hx, hv))


class StageEval(NamedTuple):
    dY: np.ndarray
    M: np.ndarray  # gradient of the self-field acceleration, (n, 3, 3)
    B: np.ndarray
    gB: np.ndarray
    fv: FieldValues


def _stage_eval(Y, xs, ws, eps, fields: CoilFieldSet, u, self_idx=None, order: int = 1) -> StageEval:
    x, v = Y[:, :3], Y[:, 3:]
    F, M = pair_field(x, xs, ws, eps, self_idx)
    fv = fields.evaluate(x, order)
    B = np.einsum("i,inj->nj", u, fv.m)
    gB = np.einsum("i,injk->njk", u, fv.grad)
    dY = np.concatenate([v, F + np.cross(v, B)], axis=1)
    return StageEval(dY, M, B, gB, fv)


def _local_jacobian(ev: StageEval, v) -> np.ndarray:
    n = len(v)
    A = np.zeros((n, 6, 6))
    A[:, :3, 3:] = np.eye(3)
    A[:, 3:, :3] = ev.M + skew(v) @ ev.gB
    A[:, 3:, 3:] = -skew(ev.B)
    return A


def characteristic_rhs(t: float, z, ensemble: ParticleEnsemble, u_now, fields: CoilFieldSet, eps: float,
                       self_index: int | None = None):
    """Right-hand side and its Jacobian at one phase point.

    Sources are the current ensemble positions; ``self_index`` names the
    source that is the point itself (skipped only when ``eps == 0``).
    """
    z = np.asarray(z, dtype=float).reshape(1, 6)
    sidx = None if self_index is None else np.array([self_index])
    ev = _stage_eval(z, ensemble.positions, ensemble.w, eps, fields, np.asarray(u_now, float), sidx)
    return ev.dY[0], _local_jacobian(ev, z[:, 3:])[0]


@dataclass
class StateTrajectory:
    """Recorded forward run: snapshots, RK stages and diagnostics."""

    times: np.ndarray
    dt: float
    z: np.ndarray  # (M+1, n, 6)
    J: np.ndarray  # (M+1, n, 6, 6)
    stage_z: np.ndarray  # (M, 4, n, 6)
    stage_m: np.ndarray  # (M, 4, N, n, 3)
    stage_gm: np.ndarray  # (M, 4, N, n, 3, 3)
    stage_M: np.ndarray  # (M, 4, n, 3, 3)
    step_u: np.ndarray  # (M, N)
    step_interval: np.ndarray  # (M,)
    ensemble: ParticleEnsemble
    fields: CoilFieldSet
    control: ControlGrid
    eps: float
    support_x: np.ndarray = field(default=None)
    support_z: np.ndarray = field(default=None)
    det_dev: np.ndarray = field(default=None)

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def weights(self) -> np.ndarray:
        return self.ensemble.w

    @property
    def R(self) -> float:
        return float(self.support_x.max())

    @property
    def R_Z(self) -> float:
        return 1.25 * float(self.support_z.max())

    @property
    def final(self) -> np.ndarray:
        return self.z[-1]


def integrate_forward(ensemble: ParticleEnsemble, control: ControlGrid, fields: CoilFieldSet, T: float,
                      steps: int, eps: float, *, t0: float = 0.0, backward: bool = False) -> StateTrajectory:
    """Classical RK4 for particles and flow Jacobians, recording every stage.

    With ``backward=True`` the run starts at ``t0`` and goes to ``t0 - T``.
    Each step uses the control of the interval containing its midpoint.
    """
    if steps < 1:
        raise PreconditionError("need at least one time step")
    if not np.isclose(control.T, T, rtol=1e-12, atol=0.0):
        raise PreconditionError("control grid horizon differs from T")
    if steps % control.n_intervals:
        raise PreconditionError("time steps must be a multiple of the control intervals")
    if control.n_coils != fields.n:
        raise PreconditionError("control and coil counts differ")
    if eps <= 0 and ensemble.n > 1:
        raise PreconditionError("eps > 0 is required for ensembles with two or more particles")
    n, N = ensemble.n, fields.n
    dt = (-T if backward else T) / steps
    w = ensemble.w
    sidx = np.arange(n)
    times = t0 + dt * np.arange(steps + 1)
    Z = np.empty((steps + 1, n, 6))
    JJ = np.empty((steps + 1, n, 6, 6))
    sz = np.empty((steps, 4, n, 6))
    sm = np.empty((steps, 4, N, n, 3))
    sgm = np.empty((steps, 4, N, n, 3, 3))
    sM = np.empty((steps, 4, n, 3, 3))
    step_u = np.empty((steps, N))
    step_m = np.empty(steps, dtype=np.int64)
    Z[0] = ensemble.z
    JJ[0] = ensemble.J
    for k in range(steps):
        t_mid = times[k] + 0.5 * dt
        m = control.interval_of(t_mid)
        u = control.values[:, m]
        step_u[k], step_m[k] = u, m
        zk, jk = Z[k], JJ[k]
        dz_sum = np.zeros_like(zk)
        dj_sum = np.zeros_like(jk)
        kz = kj = None
        for s in range(4):
            if s == 0:
                Y, JY = zk, jk
            else:
                Y = zk + RK_A[s] * dt * kz
                JY = jk + RK_A[s] * dt * kj
            ev = _stage_eval(Y, Y[:, :3], w, eps, fields, u, sidx)
            A = _local_jacobian(ev, Y[:, 3:])
            kz = ev.dY
            kj = A @ JY
            sz[k, s], sm[k, s], sgm[k, s], sM[k, s] = Y, ev.fv.m, ev.fv.grad, ev.M
            dz_sum += RK_B[s] * kz
            dj_sum += RK_B[s] * kj
        Z[k + 1] = zk + dt * dz_sum
        JJ[k + 1] = jk + dt * dj_sum
        if not (np.all(np.isfinite(Z[k + 1])) and np.all(np.isfinite(JJ[k + 1]))):
            raise IntegrationError("non-finite particle state", float(times[k + 1]))
    traj = StateTrajectory(times, dt, Z, JJ, sz, sm, sgm, sM, step_u, step_m, ensemble, fields, control, float(eps))
    traj.support_x = np.linalg.norm(Z[..., :3], axis=-1).max(axis=1)
    traj.support_z = np.linalg.norm(Z, axis=-1).max(axis=1)
    traj.det_dev = np.abs(np.linalg.det(JJ) - 1.0).max(axis=1)
    return traj


class TracerResult(NamedTuple):
    z: np.ndarray
    J: np.ndarray | None
    dz: np.ndarray | None
    dJ: np.ndarray | None
    history: np.ndarray | None


def advect_tracers(traj: StateTrajectory, points, *, start_step: int = 0, stop_step: int | None = None,
                   jacobian: bool = True, tangent=None, keep_history: bool = False) -> TracerResult:
    """Carry zero-weight tracers through the recorded stages of a run.

    Tracers feel the field of the recorded ensemble but do not act on it, so
    a tracer started on a particle's initial point follows that particle.
    ``tangent`` propagates a direction ``dz`` together with the derivative
    ``dJ`` of the tracer Jacobian along it.
    """
    stop = traj.steps if stop_step is None else stop_step
    Q = np.array(points, dtype=float).reshape(-1, 6)
    nt = len(Q)
    dt = traj.dt
    w = traj.weights
    fields = traj.fields
    want_j = jacobian or tangent is not None
    JQ = np.broadcast_to(np.eye(6), (nt, 6, 6)).copy() if want_j else None
    dQ = None if tangent is None else np.array(tangent, dtype=float).reshape(nt, 6)
    dJQ = None if tangent is None else np.zeros((nt, 6, 6))
    hist = [Q.copy()] if keep_history else None
    order = 2 if tangent is not None else 1
    for k in range(start_step, stop):
        u = traj.step_u[k]
        sums = [np.zeros_like(Q), None, None, None]
        if want_j:
            sums[1] = np.zeros_like(JQ)
        if dQ is not None:
            sums[2] = np.zeros_like(dQ)
            sums[3] = np.zeros_like(dJQ)
        kz = kj = kd = kdj = None
        for s in range(4):
            c = RK_A[s] * dt
            Y = Q if s == 0 else Q + c * kz
            ev = _stage_eval(Y, traj.stage_z[k, s, :, :3], w, traj.eps, fields, u, None, order)
            kz = ev.dY
            sums[0] += RK_B[s] * kz
            if want_j:
                A = _local_jacobian(ev, Y[:, 3:])
                JY = JQ if s == 0 else JQ + c * kj
                kj = A @ JY
                sums[1] += RK_B[s] * kj
            if dQ is not None:
                dY = dQ if s == 0 else dQ + c * kd
                dJY = dJQ if s == 0 else dJQ + c * kdj
                dx, dv = dY[:, :3], dY[:, 3:]
                hB = np.einsum("i,injkl->njkl", u, ev.fv.hess)
                dgB = np.einsum("njkl,nl->njk", hB, dx)
                dB = np.einsum("njk,nk->nj", ev.gB, dx)
                dA = np.zeros((nt, 6, 6))
                dA[:, 3:, :3] = (
                    pair_gradient_derivative(Y[:, :3], traj.stage_z[k, s, :, :3], w, traj.eps, dx)
                    + skew(dv) @ ev.gB + skew(Y[:, 3:]) @ dgB
                )
                dA[:, 3:, 3:] = -skew(dB)
                kd = np.einsum("nij,nj->ni", A, dY)
                kdj = A @ dJY + dA @ JY
                sums[2] += RK_B[s] * kd
                sums[3] += RK_B[s] * kdj
        Q = Q + dt * sums[0]
        if want_j:
            JQ = JQ + dt * sums[1]
        if dQ is not None:
            dQ = dQ + dt * sums[2]
            dJQ = dJQ + dt * sums[3]
        if keep_history:
            hist.append(Q.copy())
    return TracerResult(Q, JQ, dQ, dJQ, None if hist is None else np.array(hist))


def lp_norm_estimate(ensemble: ParticleEnsemble, p: float) -> float:
    """``(sum_k h^6 f0_k^p)^(1/p)``, or ``max f0`` for ``p = inf``."""
    if np.isinf(p):
        return float(np.max(ensemble.f0))
    if p < 1:
        raise PreconditionError("p must be >= 1")
    return float(np.sum(ensemble.cell_volume * ensemble.f0**p) ** (1.0 / p))


def kde_l2_norm(z, w, J, bandwidth) -> float:
    """L2 norm of a Gaussian kernel-density reconstruction of f.

    Particle k carries the kernel ``w_k N(. - z_k; 0, J_k S^2 J_k^T)`` with
    ``S = diag(bandwidth)``; the kernels follow the local flow so the
    reconstruction is the pushforward of a KDE of the initial datum.  The
    squared norm is a double sum of Gaussian overlaps.
    """
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    S2 = np.diag(np.broadcast_to(np.asarray(bandwidth, dtype=float), (6,)) ** 2)
    C = J @ S2 @ np.swapaxes(J, -1, -2)
    n = len(z)
    total = 0.0
    chunk = max(1, 200_000 // max(n, 1))
    for i0 in range(0, n, chunk):
        i1 = min(n, i0 + chunk)
        Cij = C[i0:i1, None] + C[None, :]
        d = z[i0:i1, None, :] - z[None, :, :]
        L = np.linalg.cholesky(Cij)
        y = np.linalg.solve(L, d[..., None])[..., 0]
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
        dens = np.exp(-0.5 * np.einsum("...i,...i->...", y, y) - 0.5 * logdet - 3.0 * np.log(2.0 * np.pi))
        total += float(np.einsum("i,ij,j->", w[i0:i1], dens, w))
    return float(np.sqrt(total))


def kde_calibrate(ensemble: ParticleEnsemble, target_norm: float, lo: float = 0.1, hi: float = 1.0) -> np.ndarray:
    """Per-axis bandwidth ``sigma * spacing`` whose KDE norm at t = 0 equals ``target_norm``.

    The norm decreases with ``sigma`` on the bracket; raises if the target
    is not bracketed.
    """
    h = np.repeat(np.asarray(ensemble.spacing, dtype=float), 3)
    eye = np.broadcast_to(np.eye(6), (ensemble.n, 6, 6))

    def resid(s):
        return kde_l2_norm(ensemble.z0, ensemble.w, eye, s * h) - target_norm

    a, b = resid(lo), resid(hi)
    if a * b > 0:
        raise PreconditionError("target norm is not bracketed by the bandwidth range")
    return brentq(resid, lo, hi, xtol=1e-6) * h


def grad_f(traj: StateTrajectory, k=None, step: int = -1, warn_cond: float = 1e8) -> np.ndarray:
    """Phase-space gradient ``J^-T grad f0`` of f at particle(s) ``k`` after ``step`` steps."""
    J = traj.J[step] if k is None else traj.J[step][np.atleast_1d(k)]
    g0 = traj.ensemble.gradf0 if k is None else traj.ensemble.gradf0[np.atleast_1d(k)]
    cond = np.linalg.cond(J)
    if np.any(cond > warn_cond):
        warnings.warn(f"ill-conditioned flow Jacobian (cond = {cond.max():.3g})", RuntimeWarning, stacklevel=2)
    out = np.linalg.solve(np.swapaxes(J, -1, -2), g0[..., None])[..., 0]
    return out[0] if (k is not None and np.ndim(k) == 0) else out


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_trajectory(traj: StateTrajectory, path) -> None:
    """Columnar text dump ``t k x1 x2 x3 v1 v2 v3 detJ f0``."""
    det = np.linalg.det(traj.J)
    f0 = traj.ensemble.f0
    with open(Path(path), "w") as fh:
        fh.write("t k x1 x2 x3 v1 v2 v3 detJ f0\n")
        for n, t in enumerate(traj.times):
            for k in range(traj.ensemble.n):
                row = [_fmt(t), str(k)] + [_fmt(c) for c in traj.z[n, k]] + [_fmt(det[n, k]), _fmt(f0[k])]
                fh.write(" ".join(row) + "\n")
