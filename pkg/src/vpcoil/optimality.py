"""First- and second-order optimality diagnostics at a computed control."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import solve_costate
from .control import ControlGrid
from .errors import PreconditionError
from .kernels import CutoffChi
from .problem import ControlProblem, gradient, second_derivative
from .solvers import SolveHistory, fixed_point_sweep
from .transport import lp_norm_estimate


@dataclass
class KKTMultipliers:
    mu_a: np.ndarray
    mu_b: np.ndarray
    stationarity: float
    dual_feasibility: float
    complementarity: float

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.dual_feasibility, self.complementarity)


def kkt_extract(u: ControlGrid, grad, atol: float = 1e-10) -> KKTMultipliers:
    """Multipliers from the reduced gradient ``grad = lambda u - p``.

    ``mu_a = max(grad, 0)`` where ``u = a`` and ``mu_b = max(-grad, 0)`` where
    ``u = b``, zero elsewhere; residual norms are L2 on the control grid.
    """
    grad = np.asarray(grad, dtype=float)
    at_a = np.abs(u.values - u.lower) <= atol
    at_b = np.abs(u.upper - u.values) <= atol
    mu_a = np.where(at_a, np.maximum(grad, 0.0), 0.0)
    mu_b = np.where(at_b & ~at_a, np.maximum(-grad, 0.0), 0.0)
    r = grad - mu_a + mu_b
    gap_a = np.where(np.isfinite(u.lower), u.values - u.lower, 0.0)
    gap_b = np.where(np.isfinite(u.upper), u.upper - u.values, 0.0)
    return KKTMultipliers(
        mu_a=mu_a,
        mu_b=mu_b,
        stationarity=u.norm(r),
        dual_feasibility=u.norm(np.minimum(mu_a, 0.0)) + u.norm(np.minimum(mu_b, 0.0)),
        complementarity=u.norm(mu_a * gap_a) + u.norm(mu_b * gap_b),
    )


def nc2_residual(u: ControlGrid, p, lam) -> np.ndarray:
    """Per-coil ``||u_i - P(p_i / lambda_i)||``; needs every ``lambda_i > 0``."""
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (u.n_coils,))
    if np.any(lam <= 0):
        raise PreconditionError("the projection formula needs lambda_i > 0")
    d = u.values - u.projected(np.asarray(p) / lam[:, None]).values
    return u.coil_norms(d)


def _random_admissible(grid: ControlGrid, rng: np.random.Generator, n: int) -> np.ndarray:
    lo = np.where(np.isfinite(grid.lower), grid.lower, -1.0)
    hi = np.where(np.isfinite(grid.upper), grid.upper, 1.0)
    return rng.uniform(lo, hi, size=(n,) + grid.values.shape)


def variational_inequality_check(u_bar: ControlGrid, grad, n_dirs: int = 32, seed: int = 0,
                                 samples=None) -> np.ndarray:
    """Pairings ``<lambda u_bar - p, u - u_bar>`` for random admissible ``u``.

    Vertices of the box nearest to the anti-gradient are included, which
    is the minimizing choice for each cell; ``samples`` adds given controls.
    """
    rng = np.random.default_rng(seed)
    samples = [np.asarray(getattr(s, "values", s), dtype=float) for s in (samples or [])]
    samples += list(_random_admissible(u_bar, rng, n_dirs))
    lo = np.where(np.isfinite(u_bar.lower), u_bar.lower, u_bar.values - 1.0)
    hi = np.where(np.isfinite(u_bar.upper), u_bar.upper, u_bar.values + 1.0)
    samples.append(np.where(np.asarray(grad) > 0, lo, hi))
    return np.array([u_bar.inner(grad, s - u_bar.values) for s in samples])


@dataclass
class OptimalityResidual:
    state: dict = field(default_factory=dict)
    costate: dict = field(default_factory=dict)
    control: np.ndarray = field(default_factory=lambda: np.zeros(0))


def optimality_residual(u, problem: ControlProblem) -> OptimalityResidual:
    """Residuals of the state equation, costate equation and control condition.

    State: Liouville deviation ``max |det J - 1|`` and drift of the ``L2`` norm.
    Costate: terminal mismatch and the change of ``g`` under a doubled cutoff.
    Control: per-coil ``||u_i - P(p_i / lambda_i)||`` (projected-gradient norm for ``lambda_i = 0``).
    """
    u = problem.control(u)
    st = problem.state(u)
    cs = problem.costate(u)
    grad, p = gradient(u, problem)
    cs2 = solve_costate(st, problem.target, CutoffChi(2.0 * problem.cutoff(st).plateau_radius))
    l2 = lp_norm_estimate(st.ensemble, 2.0)
    out = OptimalityResidual()
    out.state = {"liouville": float(np.max(st.det_dev)), "l2_drift": abs(l2 - np.sqrt(problem.f0_norm_sq))}
    out.costate = {"terminal": cs.terminal_residual, "chi_independence": float(np.max(np.abs(cs.g - cs2.g)))}
    ctrl = u.coil_norms(u.values - u.projected(u.values - grad).values)
    pos = problem.lam > 0
    if np.any(pos):
        lam = np.where(pos, problem.lam, 1.0)[:, None]
        ctrl[pos] = u.coil_norms(u.values - u.projected(p / lam).values)[pos]
    out.control = ctrl
    return out


def default_active_tol(u: ControlGrid, grad, p, lam=None) -> float:
    """Relative threshold for strong activity; the box width sets the scale when p vanishes."""
    scale = max(float(np.max(np.abs(np.asarray(grad) - np.asarray(p)))), float(np.max(np.abs(p))))
    if lam is not None:
        width = np.where(np.isfinite(u.upper - u.lower), u.upper - u.lower, 0.0)
        scale = max(scale, float(np.max(np.asarray(lam)[:, None] * width)))
    return 1e-6 * max(scale, 1e-300)


def critical_cone_project(h, u_bar: ControlGrid, grad, tol_active: float) -> np.ndarray:
    """Project ``h`` onto the critical cone at ``u_bar``.

    Cells with ``|grad| > tol_active`` are strongly active and get zero;
    otherwise ``h >= 0`` at the lower bound and ``h <= 0`` at the upper bound.
    """
    h = np.array(h, dtype=float)
    grad = np.asarray(grad, dtype=float)
    at_a = np.abs(u_bar.values - u_bar.lower) <= tol_active
    at_b = np.abs(u_bar.upper - u_bar.values) <= tol_active
    h = np.where(at_a, np.maximum(h, 0.0), h)
    h = np.where(at_b, np.minimum(h, 0.0), h)
    h[np.abs(grad) > tol_active] = 0.0
    return h


@dataclass
class SSCResult:
    quotients: np.ndarray
    min_quotient: float
    n_used: int
    notice: str = ""


def ssc_sample_check(u_bar, problem: ControlProblem, n_dirs: int = 5, seed: int = 0,
                     tol_active: float | None = None) -> SSCResult:
    """Sample ``J''(u_bar)[h, h] / ||h||^2`` over random critical-cone directions."""
    u_bar = problem.control(u_bar)
    grad, p = gradient(u_bar, problem)
    tol = default_active_tol(u_bar, grad, p, problem.lam) if tol_active is None else tol_active
    rng = np.random.default_rng(seed)
    qs = []
    for _ in range(n_dirs):
        h = critical_cone_project(rng.standard_normal(u_bar.values.shape), u_bar, grad, tol)
        nh = u_bar.norm(h) ** 2
        if nh <= 1e-28:
            continue
        qs.append(second_derivative(u_bar, h, h, problem) / nh)
    if not qs:
        return SSCResult(np.zeros(0), float("nan"), 0, "critical cone is {0}; the sufficient condition holds trivially")
    qs = np.array(qs)
    return SSCResult(qs, float(qs.min()), len(qs))


@dataclass
class UniquenessResult:
    max_distance: float
    solutions: list
    histories: list[SolveHistory]

    @property
    def converged(self) -> bool:
        return all(h.converged for h in self.histories)


def uniqueness_probe(problem: ControlProblem, n_starts: int = 4, seed: int = 0, theta: float = 1.0,
                     tol: float = 1e-9, max_iter: int = 100, starts=None) -> UniquenessResult:
    """Run the fixed-point sweep from several admissible starts and compare the limits."""
    grid = problem.grid
    if starts is None:
        rng = np.random.default_rng(seed)
        starts = [np.zeros_like(grid.values)] + list(_random_admissible(grid, rng, n_starts - 1))
    sols, hists = [], []
    for s in starts:
        u, hist = fixed_point_sweep(s, problem, theta=theta, tol=tol, max_iter=max_iter)
        sols.append(u)
        hists.append(hist)
    dist = max((grid.norm(a.values - b.values) for i, a in enumerate(sols) for b in sols[i + 1:]), default=0.0)
    return UniquenessResult(dist, sols, hists)
