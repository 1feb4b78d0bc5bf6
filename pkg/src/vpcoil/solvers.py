"""Projected-gradient and fixed-point solvers for the box-constrained problem."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import ControlGrid
from .errors import PreconditionError, SolverError
from .problem import ControlProblem, evaluate_cost, gradient


@dataclass
class IterationRecord:
    iter: int
    J: float
    grad_norm: float
    step: float
    n_backtracks: int


@dataclass
class SolveHistory:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    message: str = ""

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class PGDOptions:
    max_iter: int = 200
    tol: float = 1e-8
    s0: float = 1.0
    shrink: float = 0.5
    c: float = 1e-4
    max_backtracks: int = 40
    bb_step: bool = False


def projected_gradient_residual(u: ControlGrid, grad) -> float:
    """``||u - P(u - grad)||`` in L2([0,T])."""
    return u.norm(u.values - u.projected(u.values - grad).values)


def projected_gradient_descent(u0, problem: ControlProblem, opts: PGDOptions | None = None
                               ) -> tuple[ControlGrid, SolveHistory]:
    """Projected gradient descent with Armijo backtracking along the projection arc.

    A step ``s`` is accepted when ``J(P(u - s g)) <= J(u) + c <g, P(u - s g) - u>``.
    Rows of the history hold the iterate's cost, its projected-gradient norm
    and the step and backtracks spent leaving it (zero for the last row).
    """
    opts = opts or PGDOptions()
    u = problem.control(u0)
    if not u.is_admissible():
        raise PreconditionError("initial control violates its bounds")
    hist = SolveHistory()
    J, _ = evaluate_cost(u, problem)
    g, _ = gradient(u, problem)
    prev = None
    for it in range(opts.max_iter + 1):
        res = projected_gradient_residual(u, g)
        if res <= opts.tol:
            hist.records.append(IterationRecord(it, J, res, 0.0, 0))
            hist.converged, hist.message = True, "projected gradient below tolerance"
            return u, hist
        if it == opts.max_iter:
            hist.records.append(IterationRecord(it, J, res, 0.0, 0))
            hist.message = "maximum iterations reached"
            return u, hist
        s = opts.s0
        if opts.bb_step and prev is not None:
            du = u.values - prev[0]
            dg = g - prev[1]
            curv = u.inner(du, dg)
            if curv > 0:
                s = float(np.clip(u.inner(du, du) / curv, 1e-6 * opts.s0, 1e6 * opts.s0))
        for bt in range(opts.max_backtracks + 1):
            trial = u.projected(u.values - s * g)
            slope = u.inner(g, trial.values - u.values)
            J_new, _ = evaluate_cost(trial, problem)
            if J_new <= J + opts.c * slope and J_new < J:
                break
            s *= opts.shrink
        else:
            hist.records.append(IterationRecord(it, J, res, 0.0, opts.max_backtracks))
            raise SolverError(
                "line search failed",
                {"iteration": it, "J": J, "residual": res, "last_step": s, "history": hist},
            )
        hist.records.append(IterationRecord(it, J, res, s, bt))
        prev = (u.values, g)
        u, J = trial, J_new
        g, _ = gradient(u, problem)
    return u, hist  # pragma: no cover


def fixed_point_sweep(u0, problem: ControlProblem, theta: float = 1.0, tol: float = 1e-9, max_iter: int = 100
                      ) -> tuple[ControlGrid, SolveHistory]:
    """Iterate ``u <- (1 - theta) u + theta P(p(u) / lambda)`` until the update is below ``tol``."""
    if np.any(problem.lam <= 0):
        raise PreconditionError(
            "fixed_point_sweep needs lambda_i > 0 for every coil; use projected_gradient_descent for lambda_i = 0"
        )
    if not 0 < theta <= 1:
        raise PreconditionError("damping theta must lie in (0, 1]")
    u = problem.control(u0)
    if not u.is_admissible():
        raise PreconditionError("initial control violates its bounds")
    hist = SolveHistory()
    for it in range(max_iter):
        J, _ = evaluate_cost(u, problem)
        _, p = gradient(u, problem)
        target = u.projected(p / problem.lam[:, None]).values
        new = (1.0 - theta) * u.values + theta * target
        new = u.projected(new).values
        delta = u.norm(new - u.values)
        hist.records.append(IterationRecord(it, J, delta, theta, 0))
        u = u.with_values(new)
        if delta <= tol:
            hist.converged, hist.message = True, "fixed-point update below tolerance"
            return u, hist
    hist.message = "maximum sweeps reached without convergence"
    return u, hist
