"""Coil geometry and Biot-Savart field shapes.

Each coil is a closed polyline carrying a unit current pattern scaled by an
amplitude.  Its field shape is

    m(x) = amp * sum_seg  int_seg  L x (x - y) / (|x - y|^2 + reg^2)^(3/2) ds

(units where curl B = 4 pi J, so a circular loop of radius a has 2 pi / a at
its centre).  Inside the simulation m, grad m and grad^2 m come from a fixed
Gauss-Legendre rule per segment, which makes them one consistent smooth
function and gives an exactly divergence-free grad m.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigurationError
from .kernels import SingularKernelError


@dataclass
class CoilGeometry:
    """Closed polyline current loop."""

    vertices: np.ndarray
    amplitude: float = 1.0
    name: str = "coil"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ConfigurationError(f"coil {self.name}: vertices must be an (n, 3) array")
        if len(v) > 1 and np.array_equal(v[0], v[-1]):
            v = v[:-1]
        if len(v) < 3:
            raise ConfigurationError(f"coil {self.name}: need at least 3 distinct vertices")
        seg = np.roll(v, -1, axis=0) - v
        if np.any(np.linalg.norm(seg, axis=1) == 0.0):
            raise ConfigurationError(f"coil {self.name}: consecutive vertices must differ")
        if not np.all(np.isfinite(v)) or not np.isfinite(self.amplitude):
            raise ConfigurationError(f"coil {self.name}: non-finite geometry")
        self.vertices = v
        self.amplitude = float(self.amplitude)

    @property
    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Start points and edge vectors of the (implicitly closed) polyline."""
        return self.vertices, np.roll(self.vertices, -1, axis=0) - self.vertices

    @property
    def diameter(self) -> float:
        v = self.vertices
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)))

    @classmethod
    def circle(cls, radius: float, n: int = 256, center=(0.0, 0.0, 0.0), axis: str = "z",
               amplitude: float = 1.0, name: str = "loop", equal_area: bool = True) -> "CoilGeometry":
        """Regular n-gon approximating a circle, counter-clockwise about ``axis``.

        With ``equal_area`` the polygon encloses the same area as the circle,
        which removes the O(n^-2) error of the inscribed polygon both at the
        centre and in the dipole far field.
        """
        th = 2.0 * np.pi * np.arange(n) / n
        if equal_area:
            radius = radius * np.sqrt(2.0 * np.pi / (n * np.sin(2.0 * np.pi / n)))
        c, s = radius * np.cos(th), radius * np.sin(th)
        z = np.zeros(n)
        pts = {"z": (c, s, z), "x": (z, c, s), "y": (s, z, c)}[axis]
        return cls(np.column_stack(pts) + np.asarray(center, dtype=float), amplitude, name)


def _gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@njit(cache=True)
def _coil_kernel(x, qp, qv, offsets, reg, order):
    # quadrature points of coil c occupy qp[offsets[c]:offsets[c+1]]
    ncoil = offsets.shape[0] - 1
    npt = x.shape[0]
    e2 = reg * reg
    m = np.zeros((ncoil, npt, 3))
    g = np.zeros((ncoil, npt, 3, 3))
    nh = npt if order >= 2 else 0
    h = np.zeros((ncoil, nh, 3, 3, 3))
    G = np.zeros((3, 3))
    H = np.zeros((3, 3, 3))
    lxe = np.zeros((3, 3))
    for k in range(npt):
        for c in range(ncoil):
            m0 = m1 = m2 = 0.0
            G[:, :] = 0.0
            if order >= 2:
                H[:, :, :] = 0.0
            for q in range(offsets[c], offsets[c + 1]):
                d0 = x[k, 0] - qp[q, 0]
                d1 = x[k, 1] - qp[q, 1]
                d2 = x[k, 2] - qp[q, 2]
                s = d0 * d0 + d1 * d1 + d2 * d2 + e2
                if s == 0.0:
                    raise ZeroDivisionError("field evaluated on the coil with reg = 0")
                inv = 1.0 / np.sqrt(s)
                i2 = inv * inv
                inv3 = inv * i2
                inv5 = inv3 * i2
                l0 = qv[q, 0]
                l1 = qv[q, 1]
                l2 = qv[q, 2]
                # c = l x d
                c0 = l1 * d2 - l2 * d1
                c1 = l2 * d0 - l0 * d2
                c2 = l0 * d1 - l1 * d0
                m0 += inv3 * c0
                m1 += inv3 * c1
                m2 += inv3 * c2
                # columns of l x e_b
                lxe[0, 0] = 0.0
                lxe[1, 0] = l2
                lxe[2, 0] = -l1
                lxe[0, 1] = -l2
                lxe[1, 1] = 0.0
                lxe[2, 1] = l0
                lxe[0, 2] = l1
                lxe[1, 2] = -l0
                lxe[2, 2] = 0.0
                t0 = 3.0 * inv5 * d0
                t1 = 3.0 * inv5 * d1
                t2 = 3.0 * inv5 * d2
                for a in range(3):
                    G[a, 0] += inv3 * lxe[a, 0]
                    G[a, 1] += inv3 * lxe[a, 1]
                    G[a, 2] += inv3 * lxe[a, 2]
                G[0, 0] -= t0 * c0
                G[0, 1] -= t1 * c0
                G[0, 2] -= t2 * c0
                G[1, 0] -= t0 * c1
                G[1, 1] -= t1 * c1
                G[1, 2] -= t2 * c1
                G[2, 0] -= t0 * c2
                G[2, 1] -= t1 * c2
                G[2, 2] -= t2 * c2
                if order >= 2:
                    inv7 = inv5 * i2
                    d = (d0, d1, d2)
                    cc = (c0, c1, c2)
                    for b in range(3):
                        for e in range(b, 3):
                            f15 = 15.0 * inv7 * d[b] * d[e]
                            for a in range(3):
                                val = f15 * cc[a] - 3.0 * inv5 * (d[e] * lxe[a, b] + d[b] * lxe[a, e])
                                if b == e:
                                    val -= 3.0 * inv5 * cc[a]
                                H[a, b, e] += val
            m[c, k, 0] = m0
            m[c, k, 1] = m1
            m[c, k, 2] = m2
            g[c, k] = G
            if order >= 2:
                for a in range(3):
                    for b in range(3):
                        for e in range(b, 3):
                            h[c, k, a, b, e] = H[a, b, e]
                            h[c, k, a, e, b] = H[a, b, e]
    return m, g, h


class FieldValues(NamedTuple):
    m: np.ndarray  # (N, n, 3)
    grad: np.ndarray  # (N, n, 3, 3), grad[..., a, b] = d_b m_a
    hess: np.ndarray | None  # (N, n, 3, 3, 3), hess[..., a, b, c] = d_b d_c m_a


@dataclass
class CoilFieldSet:
    """The field shapes of N coils, evaluated by a per-segment Gauss rule."""

    coils: list[CoilGeometry]
    reg: float | None = None
    n_gauss: int = 4
    _qp: np.ndarray = field(init=False, repr=False)
    _qv: np.ndarray = field(init=False, repr=False)
    _off: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.coils) < 1:
            raise ConfigurationError("at least one coil is required")
        if self.reg is None:
            self.reg = 1e-6 * max(c.diameter for c in self.coils)
        if self.reg < 0:
            raise ConfigurationError("coil softening must be >= 0")
        sg, wg = _gauss01(self.n_gauss)
        qp, qv = [], []
        for coil in self.coils:
            a, L = coil.segments
            qp.append((a[:, None, :] + sg[None, :, None] * L[:, None, :]).reshape(-1, 3))
            qv.append((coil.amplitude * wg[None, :, None] * L[:, None, :]).reshape(-1, 3))
        self._qp = np.ascontiguousarray(np.concatenate(qp))
        self._qv = np.ascontiguousarray(np.concatenate(qv))
        self._off = np.concatenate([[0], np.cumsum([len(q) for q in qp])]).astype(np.int64)

    @property
    def n(self) -> int:
        return len(self.coils)

    def evaluate(self, x, order: int = 1) -> FieldValues:
        """Field shapes and derivatives at points ``x`` of shape ``(n, 3)``."""
        x = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, 3))
        try:
            m, g, h = _coil_kernel(x, self._qp, self._qv, self._off, float(self.reg), int(order))
        except ZeroDivisionError as exc:
            raise SingularKernelError(str(exc)) from None
        return FieldValues(m, g, h if order >= 2 else None)

    def curve_distance(self, x) -> np.ndarray:
        """Distance from each point to the nearest coil segment."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        best = np.full(len(x), np.inf)
        for coil in self.coils:
            a, L = coil.segments
            r = x[:, None, :] - a[None]
            t = np.clip(np.einsum("nsi,si->ns", r, L) / np.einsum("si,si->s", L, L), 0.0, 1.0)
            dist = np.linalg.norm(r - t[..., None] * L[None], axis=-1).min(axis=1)
            best = np.minimum(best, dist)
        return best


def biot_savart_eval(coil: CoilGeometry, x, reg: float = 0.0):
    """Field shape of one coil at a point: closed-form field, Gauss-rule Jacobian."""
    if reg < 0:
        raise ValueError("reg must be >= 0")
    x = np.asarray(x, dtype=float)
    a, L = coil.segments
    ell = np.linalg.norm(L, axis=1)
    t = L / ell[:, None]
    r = x[None, :] - a
    s0 = np.einsum("si,si->s", r, t)
    rho = r - s0[:, None] * t
    c2 = np.einsum("si,si->s", rho, rho) + reg * reg
    inside = (s0 >= 0.0) & (s0 <= ell)
    if np.any((c2 == 0.0) & inside):
        raise SingularKernelError("evaluation point on a coil segment with reg = 0")
    c2s = np.where(c2 == 0.0, 1.0, c2)
    hi = ell - s0
    lo = -s0
    integral = hi / (c2s * np.sqrt(hi * hi + c2s)) - lo / (c2s * np.sqrt(lo * lo + c2s))
    integral = np.where(c2 == 0.0, 0.0, integral)
    m = coil.amplitude * np.sum(np.cross(t, r) * integral[:, None], axis=0)
    grad = CoilFieldSet([coil], reg=reg).evaluate(x[None, :]).grad[0, 0]
    return m, grad


def superpose(u_now, fields: CoilFieldSet, x, values: FieldValues | None = None):
    """``B = sum_i u_i m_i(x)`` and its Jacobian; ``x`` may be one point or many."""
    u_now = np.asarray(u_now, dtype=float).reshape(-1)
    if len(u_now) != fields.n:
        raise ValueError(f"expected {fields.n} currents, got {len(u_now)}")
    x = np.asarray(x, dtype=float)
    fv = values if values is not None else fields.evaluate(x.reshape(-1, 3))
    B = np.einsum("i,inj->nj", u_now, fv.m)
    gB = np.einsum("i,injk->njk", u_now, fv.grad)
    if x.ndim == 1:
        return B[0], gB[0]
    return B, gB


def _box(box) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = (np.asarray(b, dtype=float).reshape(3) for b in box)
    if np.any(hi <= lo):
        raise ValueError("box upper corner must exceed lower corner")
    return lo, hi


def _sample_box(fields: CoilFieldSet, box, n_samples: int, seed: int, margin: float | None):
    lo, hi = _box(box)
    rng = np.random.default_rng(seed)
    if margin is None:
        margin = 10.0 * fields.reg
    pts = np.empty((0, 3))
    tries = 0
    while len(pts) < n_samples and tries < 50:
        cand = lo + (hi - lo) * rng.random((max(n_samples, 16), 3))
        cand = cand[fields.curve_distance(cand) >= margin]
        pts = np.vstack([pts, cand])
        tries += 1
    return pts[:n_samples]


def divergence_residual(fields: CoilFieldSet, sample_box, n_samples: int = 1000, seed: int = 0,
                        margin: float | None = None, grad_fn=None) -> np.ndarray:
    """Per-coil max ``|trace grad m_i|`` over random samples in a box.

    ``grad_fn(x) -> (N, n, 3, 3)`` replaces the analytic Jacobian (e.g. by
    finite differences).  Samples closer than ``margin`` (default 10 reg) to a
    coil are rejected.
    """
    x = _sample_box(fields, sample_box, n_samples, seed, margin)
    g = fields.evaluate(x).grad if grad_fn is None else grad_fn(x)
    div = np.trace(g, axis1=-2, axis2=-1)
    return np.max(np.abs(div), axis=1)


def fd_gradient(fields: CoilFieldSet, x, h_fd: float) -> np.ndarray:
    """Central finite-difference Jacobian of all field shapes."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    out = np.zeros((fields.n, len(x), 3, 3))
    for b in range(3):
        e = np.zeros(3)
        e[b] = h_fd
        out[..., :, b] = (fields.evaluate(x + e).m - fields.evaluate(x - e).m) / (2 * h_fd)
    return out


@dataclass
class FieldNormEstimate:
    m_sup: np.ndarray
    grad_sup: np.ndarray
    hess_sup: np.ndarray
    M: float
    K: float


def field_norm_estimate(fields: CoilFieldSet, sample_box, n_samples: int = 2000, lower=None,
                        upper=None, dt: float = 1.0, seed: int = 0, margin: float | None = None,
                        extra_points=None) -> FieldNormEstimate:
    """Sampled sup-norm surrogates and the admissibility radius.

    ``M = max_i (|m_i| + |grad m_i| + |grad^2 m_i|)_sup`` and
    ``K = 2 M sqrt(N) (||a|| + ||b||)`` with L2-in-time bound norms built from
    per-cell arrays ``lower``/``upper`` of shape (N, M_u) and cell width ``dt``.
    """
    x = _sample_box(fields, sample_box, n_samples, seed, margin)
    if extra_points is not None:
        x = np.vstack([x, np.asarray(extra_points, dtype=float).reshape(-1, 3)])
    fv = fields.evaluate(x, order=2)
    m_sup = np.linalg.norm(fv.m, axis=-1).max(axis=1)
    g_sup = np.linalg.norm(fv.grad.reshape(fields.n, len(x), -1), axis=-1).max(axis=1)
    h_sup = np.linalg.norm(fv.hess.reshape(fields.n, len(x), -1), axis=-1).max(axis=1)
    M = float(np.max(m_sup + g_sup + h_sup))
    na = 0.0 if lower is None else float(np.sqrt(np.sum(np.asarray(lower, float) ** 2) * dt))
    nb = 0.0 if upper is None else float(np.sqrt(np.sum(np.asarray(upper, float) ** 2) * dt))
    K = 2.0 * M * np.sqrt(fields.n) * (na + nb)
    return FieldNormEstimate(m_sup, g_sup, h_sup, M, float(K))


@dataclass
class TabulatedFields:
    """Trilinear tables of m_i and grad m_i on a uniform box grid."""

    fields: CoilFieldSet
    axes: tuple[np.ndarray, np.ndarray, np.ndarray]
    m_table: np.ndarray
    grad_table: np.ndarray
    max_discrepancy: float = float("nan")

    def __post_init__(self):
        n = self.fields.n
        shape = tuple(len(a) for a in self.axes)
        vals = np.concatenate(
            [self.m_table.reshape(n, *shape, 3), self.grad_table.reshape(n, *shape, 9)], axis=-1
        )
        vals = np.moveaxis(vals, 0, -2).reshape(*shape, n * 12)
        self._interp = RegularGridInterpolator(self.axes, vals, method="linear", bounds_error=True)

    @property
    def points(self) -> np.ndarray:
        """Grid nodes in table order, shape ``(n_nodes, 3)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, 3)

    def evaluate(self, x) -> FieldValues:
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        n = self.fields.n
        out = self._interp(x).reshape(len(x), n, 12)
        out = np.moveaxis(out, 1, 0)
        return FieldValues(out[..., :3].copy(), out[..., 3:].reshape(n, len(x), 3, 3).copy(), None)


def tabulate_fields(fields: CoilFieldSet, box, spacing: float, required_radius: float | None = None
                    ) -> TabulatedFields:
    """Tabulate the field shapes on a grid and measure interpolation error."""
    lo, hi = _box(box)
    if required_radius is not None and (np.any(lo > -required_radius) or np.any(hi < required_radius)):
        raise ConfigurationError(f"table box does not cover the ball of radius {required_radius}")
    axes = tuple(np.linspace(lo[d], hi[d], int(np.ceil((hi[d] - lo[d]) / spacing)) + 1) for d in range(3))
    fv = fields.evaluate(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3))
    tab = TabulatedFields(fields, axes, fv.m, fv.grad)
    # probe off the cell centres: there the trilinear error is the Laplacian
    # term, which vanishes for these harmonic fields and hides the h^2 rate
    frac = (0.25, 0.5, 0.75)
    probes = np.stack(np.meshgrid(*[a[:-1] + f * (a[1:] - a[:-1]) for a, f in zip(axes, frac)], indexing="ij"),
                      -1).reshape(-1, 3)
    direct = fields.evaluate(probes).m
    cached = tab.evaluate(probes).m
    scale = max(float(np.max(np.abs(direct))), 1e-300)
    tab.max_discrepancy = float(np.max(np.abs(direct - cached)) / scale)
    return tab


# ---------------------------------------------------------------------------
# coil file io


def read_coil_file(path) -> list[CoilGeometry]:
    """Parse ``coil <name> amplitude <real>`` headers followed by ``v x y z`` lines."""
    coils: list[CoilGeometry] = []
    name, amp, verts = None, 1.0, []
    path = Path(path)

    def flush():
        if name is not None:
            coils.append(CoilGeometry(np.array(verts, dtype=float).reshape(-1, 3), amp, name))

    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "coil":
            if len(tok) != 4 or tok[2] != "amplitude":
                raise ConfigurationError(f"{path}:{lineno}: expected 'coil <name> amplitude <real>'")
            flush()
            name, verts = tok[1], []
            try:
                amp = float(tok[3])
            except ValueError:
                raise ConfigurationError(f"{path}:{lineno}: bad amplitude {tok[3]!r}") from None
        elif tok[0] == "v":
            if name is None:
                raise ConfigurationError(f"{path}:{lineno}: vertex before any coil header")
            if len(tok) != 4:
                raise ConfigurationError(f"{path}:{lineno}: expected 'v x y z'")
            try:
                verts.append([float(t) for t in tok[1:]])
            except ValueError:
                raise ConfigurationError(f"{path}:{lineno}: bad vertex {line!r}") from None
        else:
            raise ConfigurationError(f"{path}:{lineno}: unknown record {tok[0]!r}")
    flush()
    if not coils:
        raise ConfigurationError(f"{path}: no coils found")
    return coils


def write_coil_file(path, coils: Sequence[CoilGeometry]) -> None:
    lines = []
    for c in coils:
        lines.append(f"coil {c.name} amplitude {c.amplitude!r}")
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in c.vertices.tolist())
    Path(path).write_text("\n".join(lines) + "\n")
