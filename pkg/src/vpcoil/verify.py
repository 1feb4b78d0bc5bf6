"""Named pass/fail checks used by the ``verify`` command."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adjoint import solve_costate
from .coils import CoilFieldSet, divergence_residual
from .control import ControlGrid
from .errors import PreconditionError
from .kernels import CutoffChi
from .optimality import kkt_extract, nc2_residual, variational_inequality_check
from .problem import ControlProblem, evaluate_cost, gradient
from .solvers import PGDOptions, projected_gradient_descent
from .transport import StateTrajectory, kde_calibrate, kde_l2_norm, lp_norm_estimate


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} value={self.value!r} tol={self.tol!r}" + (f" {self.detail}" if self.detail else "")


def interior_samples(grid: ControlGrid, rng: np.random.Generator, n: int, shrink: float = 0.8) -> list[np.ndarray]:
    """Random controls strictly inside the box (finite bounds), or in [-1, 1] otherwise."""
    lo = np.where(np.isfinite(grid.lower), grid.lower, -1.0) * shrink
    hi = np.where(np.isfinite(grid.upper), grid.upper, 1.0) * shrink
    return [rng.uniform(lo, hi) for _ in range(n)]


def check_gradient(problem: ControlProblem, n_pairs: int = 5, alpha: float = 1e-3, rtol: float = 1e-3,
                   seed: int = 0) -> CheckResult:
    """Adjoint directional derivative against a central difference of J."""
    rng = np.random.default_rng(seed)
    grid = problem.grid
    errs = []
    for u in interior_samples(grid, rng, n_pairs):
        h = rng.standard_normal(u.shape)
        # keep u +- alpha h admissible
        gap = float(np.min(np.minimum(u - grid.lower, grid.upper - u)))
        h *= min(1.0, 0.5 * gap / (alpha * np.abs(h).max()))
        g, _ = gradient(u, problem)
        jp, _ = evaluate_cost(u + alpha * h, problem)
        jm, _ = evaluate_cost(u - alpha * h, problem)
        fd = (jp - jm) / (2 * alpha)
        ad = grid.inner(g, h)
        errs.append(abs(ad - fd) / max(abs(fd), 1e-300))
    worst = max(errs)
    return CheckResult("gradient_fd", worst <= rtol, worst, rtol, f"pairs={n_pairs} alpha={alpha!r}")


def check_liouville(state: StateTrajectory, tol: float = 1e-6) -> CheckResult:
    dev = float(np.max(state.det_dev))
    return CheckResult("liouville", dev <= tol, dev, tol)


def check_conservation(state: StateTrajectory, p_values=(1.0, 2.0, np.inf), kde_rtol: float = 0.05,
                       exact_l2: float | None = None) -> list[CheckResult]:
    """Particle Lp norms are carried exactly; the KDE norm at T matches the L2 norm."""
    ens = state.ensemble
    out = []
    drift = 0.0
    for p in p_values:
        before = lp_norm_estimate(ens, p)
        after = lp_norm_estimate(ens.restarted(state.final), p)
        drift = max(drift, abs(after - before))
    out.append(CheckResult("lp_invariance", drift == 0.0, drift, 0.0))
    target = exact_l2 if exact_l2 is not None else lp_norm_estimate(ens, 2.0)
    try:
        bw = kde_calibrate(ens, target)
    except PreconditionError as exc:
        # too few particles to resolve the norm with any admissible bandwidth
        out.append(CheckResult("kde_l2", False, float("inf"), kde_rtol, str(exc).replace(" ", "_")))
        return out
    ratio = kde_l2_norm(state.final, ens.w, state.J[-1], bw) / target
    out.append(CheckResult("kde_l2", abs(ratio - 1.0) <= kde_rtol, abs(ratio - 1.0), kde_rtol, f"ratio={ratio!r}"))
    return out


def check_chi_independence(problem: ControlProblem, u, tol: float = 1e-6) -> CheckResult:
    st = problem.state(u)
    r = problem.cutoff(st).plateau_radius
    g1 = solve_costate(st, problem.target, CutoffChi(r)).g
    g2 = solve_costate(st, problem.target, CutoffChi(2.0 * r)).g
    diff = float(np.max(np.abs(g1 - g2)))
    return CheckResult("chi_independence", diff <= tol, diff, tol)


def check_divergence(fields: CoilFieldSet, box, tol: float = 1e-8, seed: int = 0) -> CheckResult:
    res = float(np.max(divergence_residual(fields, box, seed=seed)))
    return CheckResult("divergence", res <= tol, res, tol)


def check_optimality(problem: ControlProblem, u0, opts: PGDOptions, kkt_tol: float = 1e-5, vi_tol: float = 1e-6,
                     seed: int = 0) -> tuple[list[CheckResult], ControlGrid]:
    """Run PGD and test the first-order conditions and the norm bound at its output."""
    u, hist = projected_gradient_descent(u0, problem, opts)
    g, p = gradient(u, problem)
    out = [CheckResult("pgd_converged", hist.converged, float(hist.residuals[-1]), opts.tol, f"iterations={len(hist) - 1}"),
           CheckResult("descent", bool(np.all(np.diff(hist.J) < 0)), float(np.max(np.diff(hist.J), initial=-np.inf)), 0.0)]
    if np.all(problem.lam > 0):
        nc2 = float(np.max(nc2_residual(u, p, problem.lam)))
        out.append(CheckResult("nc2", nc2 <= kkt_tol, nc2, kkt_tol))
    kkt = kkt_extract(u, g)
    out.append(CheckResult("kkt", kkt.max_residual <= kkt_tol, kkt.max_residual, kkt_tol))
    vi = float(np.min(variational_inequality_check(u, g, seed=seed)))
    out.append(CheckResult("variational_inequality", vi >= -vi_tol, vi, -vi_tol))
    pos = problem.lam > 0
    if np.any(pos):
        bound = 2.0 / np.sqrt(problem.lam[pos]) * np.sqrt(problem.f0_norm_sq)
        ratio = float(np.max(u.coil_norms()[pos] / bound))
        out.append(CheckResult("norm_bound", ratio <= 1.0, ratio, 1.0))
    return out, u
