"""End-to-end acceptance checks, one test per criterion.

Each test records a ``PASS``/``FAIL`` line (shown in the terminal summary
and printed with ``-s``) before asserting.
"""

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import linearized_fd_errors, second_difference
from vpcoil.adjoint import solve_costate
from vpcoil.cli import main
from vpcoil.coils import CoilFieldSet, CoilGeometry, biot_savart_eval, divergence_residual
from vpcoil.kernels import CutoffChi
from vpcoil.optimality import kkt_extract, nc2_residual, ssc_sample_check, uniqueness_probe, \
    variational_inequality_check
from vpcoil.problem import evaluate_cost, gradient, second_derivative
from vpcoil.scenario import default_scenario, dump_scenario
from vpcoil.solvers import projected_gradient_descent
from vpcoil.transport import kde_calibrate, kde_l2_norm, lp_norm_estimate


def record(n: int, ok: bool, text: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def interior_pairs(grid, rng, n, alpha):
    """Random (u, h) with u +- alpha h strictly inside the box."""
    out = []
    for _ in range(n):
        u = rng.uniform(0.8 * grid.lower, 0.8 * grid.upper)
        h = rng.standard_normal(u.shape)
        gap = float(np.min(np.minimum(u - grid.lower, grid.upper - u)))
        out.append((u, h * min(1.0, 0.5 * gap / (alpha * np.abs(h).max()))))
    return out


def test_criterion_1_biot_savart():
    coil = CoilGeometry.circle(1.0, 256)
    rel = []
    for z in np.linspace(-2.0, 2.0, 10):
        exact = 2.0 * np.pi / (1.0 + z * z) ** 1.5
        m, _ = biot_savart_eval(coil, (0.0, 0.0, z))
        rel.append(abs(m[2] - exact) / exact)
    div = float(np.max(divergence_residual(CoilFieldSet([coil]), (-0.6 * np.ones(3), 0.6 * np.ones(3)), seed=0)))
    record(1, max(rel) <= 1e-4 and div <= 1e-8,
           f"on-axis max rel err {max(rel):.3e} (tol 1e-4), divergence {div:.3e} (tol 1e-8)")


def test_criterion_2_liouville_and_conservation(default_sc, default_problem):
    st = default_problem.state(default_sc.grid().values)
    ens = st.ensemble
    det = float(np.max(st.det_dev))
    drift = max(abs(lp_norm_estimate(ens.restarted(st.final), p) - lp_norm_estimate(ens, p))
                for p in (1.0, 2.0, 4.0, np.inf))
    exact = default_sc.initial_profile().lp_norm(2.0)
    ratio = kde_l2_norm(st.final, ens.w, st.J[-1], kde_calibrate(ens, exact)) / exact
    record(2, det <= 1e-6 and drift == 0.0 and abs(ratio - 1) <= 0.05,
           f"max|detJ-1| {det:.3e} (tol 1e-6), lp drift {drift:.1e} (exact 0), KDE L2 ratio {ratio:.4f} (tol 5%)")


def test_criterion_3_adjoint_gradient(default_problem):
    alpha = 1e-3
    grid = default_problem.grid
    errs = []
    for u, h in interior_pairs(grid, np.random.default_rng(3), 5, alpha):
        g, _ = gradient(u, default_problem)
        fd = (evaluate_cost(u + alpha * h, default_problem)[0] - evaluate_cost(u - alpha * h, default_problem)[0]) \
            / (2 * alpha)
        errs.append(abs(grid.inner(g, h) - fd) / abs(fd))
    record(3, max(errs) <= 1e-3, f"5 pairs, max rel err {max(errs):.3e} (tol 1e-3, alpha 1e-3)")


def test_criterion_4_linearized_consistency(default_sc, default_problem):
    rng = np.random.default_rng(4)
    u, h = interior_pairs(default_problem.grid, rng, 1, 0.1)[0]
    es, ec = linearized_fd_errors(default_problem, default_sc.initial_profile(), u, h, (1e-1, 1e-2, 1e-3))
    ok = bool(np.all(np.diff(es) < 0) and np.all(np.diff(ec) < 0))
    record(4, ok, "state errs " + " ".join(f"{e:.2e}" for e in es) + ", costate errs "
           + " ".join(f"{e:.2e}" for e in ec) + " (alpha 1e-1, 1e-2, 1e-3; monotone decrease)")


def test_criterion_5_optimality(default_sc, default_problem, default_solution):
    u, hist = default_solution
    g, p = gradient(u, default_problem)
    nc2 = float(nc2_residual(u, p, default_problem.lam).max())
    vi = float(variational_inequality_check(u, g, n_dirs=64, seed=5).min())
    kkt = kkt_extract(u, g, atol=1e-9).max_residual
    f0 = default_sc.initial_profile().lp_norm(2.0)
    bound = float(np.max(u.coil_norms() / (2.0 / np.sqrt(default_problem.lam) * f0)))
    record(5, hist.converged and nc2 <= 1e-5 and vi >= -1e-6 and kkt <= 1e-5 and bound <= 1.0,
           f"converged {hist.converged}, NC2 {nc2:.2e} (tol 1e-5), min VI {vi:.2e} (tol -1e-6), "
           f"KKT {kkt:.2e} (tol 1e-5), max ||u_i|| / bound {bound:.3f} (<= 1)")


def test_criterion_6_uniqueness():
    sc = default_scenario("uniqueness.ini")
    assert sc.T / float(np.max(sc.lambdas())) == pytest.approx(0.1)
    prob = sc.problem()
    grid = prob.grid
    rng = np.random.default_rng(6)
    starts = [rng.uniform(grid.lower, grid.upper) for _ in range(4)]
    res = uniqueness_probe(prob, starts=starts, theta=sc.fp_theta, tol=sc.fp_tol, max_iter=sc.fp_max_iter)
    u_pgd, hist = projected_gradient_descent(sc.grid().values, prob, sc.pgd_options())
    dist = max([res.max_distance] + [grid.norm(s.values - u_pgd.values) for s in res.solutions])
    record(6, res.converged and hist.converged and dist <= 1e-4,
           f"T/lambda 0.1, 4 fixed-point starts + PGD converged {res.converged and hist.converged}, "
           f"max L2 distance {dist:.2e} (tol 1e-4)")


def test_criterion_7_second_derivative(default_problem, default_solution):
    u, _ = default_solution
    rng = np.random.default_rng(7)
    shape = u.values.shape
    sym = []
    for _ in range(5):
        h, k = rng.standard_normal(shape), rng.standard_normal(shape)
        a, b = second_derivative(u, h, k, default_problem), second_derivative(u, k, h, default_problem)
        sym.append(abs(a - b) / max(abs(a), abs(b)))
    # second difference along a direction that keeps u +- alpha h admissible
    gap = np.minimum(u.values - u.lower, u.upper - u.values)
    h = np.where(gap > 1e-6, rng.standard_normal(shape), 0.0)
    h *= 0.5 * gap[gap > 1e-6].min() / np.abs(h).max()
    exact = second_derivative(u, h, h, default_problem)
    errs = [abs(second_difference(default_problem, u.values, h, a) - exact) / abs(exact) for a in (1.0, 0.5, 0.25)]
    ssc = ssc_sample_check(u, default_problem, n_dirs=5, seed=7)
    q_ok = ssc.n_used == 0 or ssc.min_quotient > 0
    record(7, max(sym) <= 1e-6 and errs[0] > errs[1] > errs[2] and q_ok,
           f"symmetry {max(sym):.2e} (tol 1e-6), second-difference rel errs "
           + " ".join(f"{e:.2e}" for e in errs) + f", SSC min quotient {ssc.min_quotient:.3g} over {ssc.n_used} dirs"
           + (f" ({ssc.notice})" if ssc.notice else ""))


def test_criterion_8_chi_independence(default_problem, default_solution):
    diffs = []
    for u in (default_solution[0].values, np.full(default_problem.grid.values.shape, 0.1)):
        st = default_problem.state(u)
        r = default_problem.cutoff(st).plateau_radius
        g1 = solve_costate(st, default_problem.target, CutoffChi(r)).g
        g2 = solve_costate(st, default_problem.target, CutoffChi(2.5 * r)).g
        diffs.append(float(np.max(np.abs(g1 - g2))))
    record(8, max(diffs) <= 1e-6, f"max |g_chi1 - g_chi2| {max(diffs):.2e} on all particles (tol 1e-6)")


def test_criterion_9_descent_and_determinism(default_sc, default_solution, tmp_path, capsys):
    _, hist = default_solution
    dJ = np.diff(hist.J)
    path = tmp_path / "scenario.ini"
    path.write_text(dump_scenario(default_sc.replace(pgd_max_iter=3)))
    codes = []
    for run in ("a", "b"):
        for cmd in ("simulate", "optimize"):
            codes.append(main([cmd, str(path), "-o", str(tmp_path / run / cmd), "--seed", "11"]))
    capsys.readouterr()
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    n_png = sum(f.suffix == ".png" for f in files)
    record(9, bool(np.all(dJ < 0)) and codes == [0] * 4 and same and n_png >= 4,
           f"J strictly decreasing over {len(hist.J)} iterates (max step {dJ.max():.2e}), "
           f"{len(files)} output files incl. {n_png} PNG byte-identical: {same}")
