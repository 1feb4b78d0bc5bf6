"""Analytic compactly supported phase-space profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import beta


def _ball_integral(n: float, r: float) -> float:
    # int_{|y| < r} (1 - |y|^2/r^2)^n dy over R^3
    return 2.0 * np.pi * r**3 * beta(1.5, n + 1.0)


@dataclass(frozen=True)
class BumpProfile:
    """``A (1 - |x-x0|^2/r^2)^3_+ (1 - |v-v0|^2/s^2)^3_+``, a C^2 bump on R^6."""

    amplitude: float = 1.0
    center_x: tuple[float, float, float] = (0.0, 0.0, 0.0)
    center_v: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius_x: float = 1.0
    radius_v: float = 1.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("bump amplitude must be >= 0")
        if self.radius_x <= 0 or self.radius_v <= 0:
            raise ValueError("bump radii must be > 0")

    @property
    def center(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.center_x, float), np.asarray(self.center_v, float)])

    def _parts(self, z):
        z = np.asarray(z, dtype=float)
        dx = (z[..., :3] - np.asarray(self.center_x)) / self.radius_x
        dv = (z[..., 3:] - np.asarray(self.center_v)) / self.radius_v
        qx = np.einsum("...i,...i->...", dx, dx)
        qv = np.einsum("...i,...i->...", dv, dv)
        ox = np.clip(1.0 - qx, 0.0, None)
        ov = np.clip(1.0 - qv, 0.0, None)
        return dx, dv, ox, ov

    def value(self, z):
        _, _, ox, ov = self._parts(z)
        return self.amplitude * ox**3 * ov**3

    def grad(self, z):
        dx, dv, ox, ov = self._parts(z)
        A = self.amplitude
        gx = (A * -6.0 * ox**2 * ov**3 / self.radius_x)[..., None] * dx
        gv = (A * -6.0 * ov**2 * ox**3 / self.radius_v)[..., None] * dv
        return np.concatenate([gx, gv], axis=-1)

    def hess(self, z):
        dx, dv, ox, ov = self._parts(z)
        A = self.amplitude
        rx, rv = self.radius_x, self.radius_v
        eye = np.eye(3)
        # d/dx of (1-q)^3 = -6 (1-q)^2 dx / r ; second derivative in scaled coords
        hx = (24.0 * ox)[..., None, None] * dx[..., :, None] * dx[..., None, :] - (6.0 * ox**2)[..., None, None] * eye
        hv = (24.0 * ov)[..., None, None] * dv[..., :, None] * dv[..., None, :] - (6.0 * ov**2)[..., None, None] * eye
        gx = (-6.0 * ox**2)[..., None] * dx / rx
        gv = (-6.0 * ov**2)[..., None] * dv / rv
        H = np.zeros(np.shape(ox) + (6, 6))
        H[..., :3, :3] = A * (ov**3)[..., None, None] * hx / rx**2
        H[..., 3:, 3:] = A * (ox**3)[..., None, None] * hv / rv**2
        H[..., :3, 3:] = A * gx[..., :, None] * gv[..., None, :]
        H[..., 3:, :3] = np.swapaxes(H[..., :3, 3:], -1, -2)
        return H

    def hessp(self, z, dz):
        return np.einsum("...ij,...j->...i", self.hess(z), np.asarray(dz, dtype=float))

    def lp_norm(self, p: float) -> float:
        """Exact ``||f||_p`` (``p = inf`` gives the amplitude)."""
        if np.isinf(p):
            return float(self.amplitude)
        ip = _ball_integral(3.0 * p, self.radius_x) * _ball_integral(3.0 * p, self.radius_v)
        return float(self.amplitude * ip ** (1.0 / p))

    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.array([self.radius_x] * 3 + [self.radius_v] * 3)
        return self.center - r, self.center + r

    def support_radius(self) -> float:
        """Radius of a ball about the origin containing the support."""
        return float(np.linalg.norm(self.center_x) + self.radius_x + np.linalg.norm(self.center_v) + self.radius_v)
