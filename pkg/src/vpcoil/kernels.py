"""Softened Coulomb kernels, pairwise field sums and the phase-space cutoff.

The kernel is the Plummer-softened Coulomb field

    K(d) = d / (|d|^2 + eps^2)^(3/2)

with exact first and second derivatives.  Pair sums run over source particles
in ascending index order inside numba loops so results are deterministic.
When ``eps == 0`` the pair ``(k, self_idx[k])`` is skipped; for ``eps > 0`` the
self pair contributes zero force and is kept in field gradients (it cancels in
every N-body linearization).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit


class SingularKernelError(ArithmeticError):
    """Raised when the unsoftened kernel is evaluated at zero separation."""


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not np.isfinite(eps) or eps < 0.0:
        raise ValueError(f"softening must be finite and >= 0, got {eps}")
    return eps


def coulomb_force_kernel(d, eps: float = 0.0):
    """Kernel ``K(d)`` and its Jacobian for an array of separations ``(..., 3)``."""
    eps = _check_eps(eps)
    d = np.asarray(d, dtype=float)
    s = np.einsum("...i,...i->...", d, d) + eps * eps
    if np.any(s == 0.0):
        raise SingularKernelError("kernel evaluated at d = 0 with eps = 0")
    inv3 = s ** -1.5
    inv5 = inv3 / s
    K = d * inv3[..., None]
    eye = np.eye(3)
    grad = eye * inv3[..., None, None] - 3.0 * d[..., :, None] * d[..., None, :] * inv5[..., None, None]
    return K, grad


def coulomb_kernel_hessian(d, eps: float = 0.0):
    """Second derivative ``T[a, b, c] = d_b d_c K_a`` for separations ``(..., 3)``."""
    eps = _check_eps(eps)
    d = np.asarray(d, dtype=float)
    s = np.einsum("...i,...i->...", d, d) + eps * eps
    if np.any(s == 0.0):
        raise SingularKernelError("kernel evaluated at d = 0 with eps = 0")
    inv5 = s ** -2.5
    inv7 = inv5 / s
    eye = np.eye(3)
    t = (
        np.einsum("ab,...c->...abc", eye, d)
        + np.einsum("ac,...b->...abc", eye, d)
        + np.einsum("bc,...a->...abc", eye, d)
    )
    ddd = np.einsum("...a,...b,...c->...abc", d, d, d)
    return -3.0 * t * inv5[..., None, None, None] + 15.0 * ddd * inv7[..., None, None, None]


# source particles per vectorized block of the reference sums
_CHUNK = 512


class SelfField(NamedTuple):
    psi: np.ndarray
    E: np.ndarray
    hess_psi: np.ndarray


def self_field(positions, weights, x, eps: float) -> SelfField:
    """Potential, field ``E = grad psi`` and Hessian of psi of a particle cloud.

    ``psi(x) = sum_k w_k / sqrt(|x - x_k|^2 + eps^2)``, so
    ``E = -sum_k w_k K(x - x_k)`` and ``hess psi = -sum_k w_k grad K``.
    ``x`` may be a single point or an array of points.
    """
    eps = _check_eps(eps)
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xq = x.reshape(-1, 3)
    psi = np.zeros(len(xq))
    E = np.zeros((len(xq), 3))
    H = np.zeros((len(xq), 3, 3))
    for k0 in range(0, len(weights), _CHUNK):
        sl = slice(k0, k0 + _CHUNK)
        d = xq[:, None, :] - positions[None, sl]
        K, gK = coulomb_force_kernel(d, eps)
        w = weights[sl]
        psi += np.einsum("k,qk->q", w, 1.0 / np.sqrt(np.einsum("qki,qki->qk", d, d) + eps * eps))
        E -= np.einsum("k,qki->qi", w, K)
        H -= np.einsum("k,qkij->qij", w, gK)
    if single:
        return SelfField(psi[0], E[0], H[0])
    return SelfField(psi, E, H)


def phi_field(positions, weights, grad_v_g, x, eps: float):
    """Costate source ``Phi(x) = sum_k w_k K(x - x_k) . (grad_v g)_k``."""
    if grad_v_g is None:
        raise ValueError("phi_field needs velocity gradients of the costate")
    eps = _check_eps(eps)
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    gv = np.asarray(grad_v_g, dtype=float).reshape(-1, 3)
    if gv.shape[0] != positions.shape[0]:
        raise ValueError("grad_v_g must have one row per particle")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xq = x.reshape(-1, 3)
    out = np.zeros(len(xq))
    for k0 in range(0, len(weights), _CHUNK):
        sl = slice(k0, k0 + _CHUNK)
        K, _ = coulomb_force_kernel(xq[:, None, :] - positions[None, sl], eps)
        out += np.einsum("k,qki,ki->q", weights[sl], K, gv[sl])
    return out[0] if single else out


# ---------------------------------------------------------------------------
# cutoff


@dataclass(frozen=True)
class CutoffChi:
    """Radial C^2 cutoff: 1 on ``|z| <= R``, 0 on ``|z| >= 2R``."""

    plateau_radius: float

    def __post_init__(self):
        if not self.plateau_radius > 0:
            raise ValueError("cutoff plateau radius must be > 0")

    @property
    def outer_radius(self) -> float:
        return 2.0 * self.plateau_radius


def _quintic(s):
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def _quintic_prime(s):
    return -30.0 * s**2 * (1.0 - s) ** 2


def chi_eval(z, chi: CutoffChi):
    """Value and gradient of the cutoff at phase points ``(..., 6)``."""
    z = np.asarray(z, dtype=float)
    R = chi.plateau_radius
    r = np.sqrt(np.einsum("...i,...i->...", z, z))
    s = np.clip((r - R) / R, 0.0, 1.0)
    val = _quintic(s)
    dq = _quintic_prime(s) / R
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r[..., None] > 0, z / np.where(r > 0, r, 1.0)[..., None], 0.0)
    grad = dq[..., None] * unit
    if z.ndim == 1:
        return float(val), grad
    return val, grad


# ---------------------------------------------------------------------------
# numba pair sums; xt targets (nt,3), xs sources (ns,3), ws source weights


@njit(cache=True)
def _field_and_gradient(xt, xs, ws, eps, self_idx):
    nt = xt.shape[0]
    ns = xs.shape[0]
    e2 = eps * eps
    F = np.zeros((nt, 3))
    M = np.zeros((nt, 3, 3))
    for k in range(nt):
        f0 = f1 = f2 = 0.0
        m00 = m01 = m02 = m11 = m12 = m22 = 0.0
        x0 = xt[k, 0]
        x1 = xt[k, 1]
        x2 = xt[k, 2]
        sk = self_idx[k]
        for j in range(ns):
            if eps == 0.0 and j == sk:
                continue
            d0 = x0 - xs[j, 0]
            d1 = x1 - xs[j, 1]
            d2 = x2 - xs[j, 2]
            s = d0 * d0 + d1 * d1 + d2 * d2 + e2
            if s == 0.0:
                raise ZeroDivisionError("coincident particles with eps = 0")
            inv = 1.0 / np.sqrt(s)
            w3 = ws[j] * inv * inv * inv
            w5 = 3.0 * w3 * inv * inv
            f0 += w3 * d0
            f1 += w3 * d1
            f2 += w3 * d2
            m00 += w3 - w5 * d0 * d0
            m11 += w3 - w5 * d1 * d1
            m22 += w3 - w5 * d2 * d2
            m01 -= w5 * d0 * d1
            m02 -= w5 * d0 * d2
            m12 -= w5 * d1 * d2
        F[k, 0] = f0
        F[k, 1] = f1
        F[k, 2] = f2
        M[k, 0, 0] = m00
        M[k, 1, 1] = m11
        M[k, 2, 2] = m22
        M[k, 0, 1] = M[k, 1, 0] = m01
        M[k, 0, 2] = M[k, 2, 0] = m02
        M[k, 1, 2] = M[k, 2, 1] = m12
    return F, M


@njit(cache=True)
def _contract_gradient(xt, xs, ws, eps, self_idx, q):
    """Phi_k = sum_j w_j K_kj . q_j and C_k = sum_j w_j gradK_kj q_j."""
    nt = xt.shape[0]
    ns = xs.shape[0]
    e2 = eps * eps
    phi = np.zeros(nt)
    C = np.zeros((nt, 3))
    for k in range(nt):
        p = c0 = c1 = c2 = 0.0
        x0 = xt[k, 0]
        x1 = xt[k, 1]
        x2 = xt[k, 2]
        sk = self_idx[k]
        for j in range(ns):
            if eps == 0.0 and j == sk:
                continue
            d0 = x0 - xs[j, 0]
            d1 = x1 - xs[j, 1]
            d2 = x2 - xs[j, 2]
            s = d0 * d0 + d1 * d1 + d2 * d2 + e2
            if s == 0.0:
                raise ZeroDivisionError("coincident particles with eps = 0")
            inv = 1.0 / np.sqrt(s)
            w3 = ws[j] * inv * inv * inv
            w5 = 3.0 * w3 * inv * inv
            q0 = q[j, 0]
            q1 = q[j, 1]
            q2 = q[j, 2]
            dq = d0 * q0 + d1 * q1 + d2 * q2
            p += w3 * dq
            c0 += w3 * q0 - w5 * d0 * dq
            c1 += w3 * q1 - w5 * d1 * dq
            c2 += w3 * q2 - w5 * d2 * dq
        phi[k] = p
        C[k, 0] = c0
        C[k, 1] = c1
        C[k, 2] = c2
    return phi, C


@njit(cache=True)
def _second_order_pairs(xt, xs, ws, eps, self_idx, dxt, dxs, pt, ps, chi, gs, dgs):
    """Second-order pair sums used by the differentiated adjoint.

    out_k  = sum_j w_j T_kj(dx_k - dx_j, pt_k - chi_k ps_j)
    dphi_k = sum_j w_j [gradK_kj (dx_k - dx_j)] . gs_j + w_j K_kj . dgs_j
    """
    nt = xt.shape[0]
    ns = xs.shape[0]
    e2 = eps * eps
    out = np.zeros((nt, 3))
    dphi = np.zeros(nt)
    for k in range(nt):
        for j in range(ns):
            if eps == 0.0 and j == self_idx[k]:
                continue
            d0 = xt[k, 0] - xs[j, 0]
            d1 = xt[k, 1] - xs[j, 1]
            d2 = xt[k, 2] - xs[j, 2]
            s = d0 * d0 + d1 * d1 + d2 * d2 + e2
            if s == 0.0:
                raise ZeroDivisionError("coincident particles with eps = 0")
            inv = 1.0 / np.sqrt(s)
            i2 = inv * inv
            w3 = ws[j] * inv * i2
            w5 = w3 * i2
            w7 = w5 * i2
            e0 = dxt[k, 0] - dxs[j, 0]
            e1 = dxt[k, 1] - dxs[j, 1]
            e2_ = dxt[k, 2] - dxs[j, 2]
            p0 = pt[k, 0] - chi[k] * ps[j, 0]
            p1 = pt[k, 1] - chi[k] * ps[j, 1]
            p2 = pt[k, 2] - chi[k] * ps[j, 2]
            de = d0 * e0 + d1 * e1 + d2 * e2_
            dp = d0 * p0 + d1 * p1 + d2 * p2
            ep = e0 * p0 + e1 * p1 + e2_ * p2
            c5 = -3.0 * w5
            c7 = 15.0 * w7 * de * dp
            out[k, 0] += c5 * (e0 * dp + p0 * de + d0 * ep) + c7 * d0
            out[k, 1] += c5 * (e1 * dp + p1 * de + d1 * ep) + c7 * d1
            out[k, 2] += c5 * (e2_ * dp + p2 * de + d2 * ep) + c7 * d2
            dg = d0 * gs[j, 0] + d1 * gs[j, 1] + d2 * gs[j, 2]
            eg = e0 * gs[j, 0] + e1 * gs[j, 1] + e2_ * gs[j, 2]
            dphi[k] += w3 * eg - 3.0 * w5 * de * dg
            dphi[k] += w3 * (d0 * dgs[j, 0] + d1 * dgs[j, 1] + d2 * dgs[j, 2])
    return out, dphi


@njit(cache=True)
def _gradient_derivative(xt, xs, ws, eps, dxt):
    """sum_j w_j T_kj[dx_k] as a 3x3 matrix per target (sources held fixed)."""
    nt = xt.shape[0]
    ns = xs.shape[0]
    e2 = eps * eps
    out = np.zeros((nt, 3, 3))
    for k in range(nt):
        e = (dxt[k, 0], dxt[k, 1], dxt[k, 2])
        for j in range(ns):
            d0 = xt[k, 0] - xs[j, 0]
            d1 = xt[k, 1] - xs[j, 1]
            d2 = xt[k, 2] - xs[j, 2]
            s = d0 * d0 + d1 * d1 + d2 * d2 + e2
            if s == 0.0:
                raise ZeroDivisionError("tracer on a source with eps = 0")
            inv = 1.0 / np.sqrt(s)
            i2 = inv * inv
            w5 = ws[j] * inv * i2 * i2
            w7 = w5 * i2
            d = (d0, d1, d2)
            de = d0 * e[0] + d1 * e[1] + d2 * e[2]
            for a in range(3):
                out[k, a, a] -= 3.0 * w5 * de
                for b in range(3):
                    out[k, a, b] += -3.0 * w5 * (d[b] * e[a] + d[a] * e[b]) + 15.0 * w7 * d[a] * d[b] * de
    return out


def _self_index(nt: int, self_idx) -> np.ndarray:
    if self_idx is None:
        return np.full(nt, -1, dtype=np.int64)
    return np.ascontiguousarray(self_idx, dtype=np.int64)


def _arr(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def pair_field(xt, xs, ws, eps: float, self_idx=None):
    """Force ``sum_j w_j K(x_k - x_j)`` and its gradient at targets."""
    try:
        return _field_and_gradient(_arr(xt), _arr(xs), _arr(ws), float(eps), _self_index(len(xt), self_idx))
    except ZeroDivisionError as exc:
        raise SingularKernelError(str(exc)) from None


def pair_contract(xt, xs, ws, eps: float, q, self_idx=None):
    """``(sum_j w_j K_kj . q_j, sum_j w_j gradK_kj q_j)``."""
    try:
        return _contract_gradient(
            _arr(xt), _arr(xs), _arr(ws), float(eps), _self_index(len(xt), self_idx), _arr(q)
        )
    except ZeroDivisionError as exc:
        raise SingularKernelError(str(exc)) from None


def pair_second_order(xt, xs, ws, eps, dxt, dxs, pt, ps, chi, gs, dgs, self_idx=None):
    try:
        return _second_order_pairs(
            _arr(xt), _arr(xs), _arr(ws), float(eps), _self_index(len(xt), self_idx),
            _arr(dxt), _arr(dxs), _arr(pt), _arr(ps), _arr(chi), _arr(gs), _arr(dgs),
        )
    except ZeroDivisionError as exc:
        raise SingularKernelError(str(exc)) from None


def pair_gradient_derivative(xt, xs, ws, eps: float, dxt):
    try:
        return _gradient_derivative(_arr(xt), _arr(xs), _arr(ws), float(eps), _arr(dxt))
    except ZeroDivisionError as exc:
        raise SingularKernelError(str(exc)) from None
