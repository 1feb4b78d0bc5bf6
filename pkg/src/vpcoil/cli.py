"""Command-line entry point ``vpcoil``.

Exit status: 0 success, 1 a verification check failed, 2 usage error,
3 any other error (message printed verbatim on stderr).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import report
from .adjoint import dump_costate, solve_costate
from .coils import tabulate_fields
from .errors import VPCoilError
from .kernels import CutoffChi
from .optimality import kkt_extract, ssc_sample_check, uniqueness_probe
from .problem import evaluate_cost, gradient
from .scenario import Scenario, default_scenario_path, dump_scenario, load_scenario
from .solvers import fixed_point_sweep, projected_gradient_descent
from .transport import dump_trajectory, integrate_forward
from .verify import (
    check_chi_independence,
    check_conservation,
    check_divergence,
    check_gradient,
    check_liouville,
    check_optimality,
)

WORKERS_ENV = "VPCOIL_WORKERS"
SUBCOMMANDS = ("fields", "simulate", "optimize", "verify", "probe-uniqueness", "ssc")


def _set_workers(n: int | None) -> None:
    if n is None:
        env = os.environ.get(WORKERS_ENV)
        n = int(env) if env else None
    if n is not None:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _write(path: Path, lines) -> Path:
    path.write_text("".join(f"{ln}\n" for ln in lines))
    return path


def _field_box(sc: Scenario) -> tuple:
    r = sc.f0_radius_x * 1.5
    c = np.asarray(sc.f0_center_x, dtype=float)
    return (c - r, c + r)


def cmd_fields(sc: Scenario, out: Path, args) -> int:
    fs = sc.fields()
    box = _field_box(sc)
    table = tabulate_fields(fs, box, args.spacing)
    pts = table.points
    rows = []
    for i in range(fs.n):
        for k, x in enumerate(pts):
            rows.append((i, *x, *table.m_table[i, k]))
    report.write_table(out / "field_table.dat", ["i", "x", "y", "z", "m1", "m2", "m3"], rows)
    div = check_divergence(fs, box, seed=args.seed)
    _write(out / "fields_report.txt", [
        f"coils {fs.n}",
        f"box_lo {' '.join(repr(float(v)) for v in box[0])}",
        f"box_hi {' '.join(repr(float(v)) for v in box[1])}",
        f"spacing {args.spacing!r}",
        f"table_max_discrepancy {table.max_discrepancy!r}",
        div.line(),
    ])
    print(div.line())
    return 0


def _run_state(sc: Scenario, which: str):
    ens = sc.ensemble()
    fs = sc.fields()
    if which == "reference" and sc.target_mode == "reference":
        u = sc.reference_grid()
    else:
        u = sc.grid()
    return integrate_forward(ens, u, fs, sc.T, sc.steps, sc.softening(ens)), ens, fs


def cmd_simulate(sc: Scenario, out: Path, args) -> int:
    st, ens, fs = _run_state(sc, args.control)
    dump_trajectory(st, out / "trajectory.dat")
    report.emit_plot_data(st, "support", out)
    report.emit_plot_data({"state": st}, "phase", out)
    lines = [check_liouville(st, sc.liouville_tol).line()]
    lines += [c.line() for c in check_conservation(st, exact_l2=sc.initial_profile().lp_norm(2.0))]
    lines.append(f"particles {ens.n}")
    lines.append(f"R_x_max {float(st.support_x.max())!r}")
    if args.costate:
        cs = solve_costate(st, sc.target(ens, fs), CutoffChi(sc.chi_factor * st.R_Z))
        dump_costate(cs, out / "costate.dat")
        lines.append(f"costate_terminal_residual {cs.terminal_residual!r}")
    _write(out / "diagnostics.txt", lines)
    print("\n".join(lines))
    return 0


def _solve(sc: Scenario, problem, solver: str):
    u0 = sc.grid().values
    if solver == "fixed-point":
        return fixed_point_sweep(u0, problem, theta=sc.fp_theta, tol=sc.fp_tol, max_iter=sc.fp_max_iter)
    return projected_gradient_descent(u0, problem, sc.pgd_options())


def _emit_solution(problem, u, hist, out: Path) -> list[str]:
    g, p = gradient(u, problem)
    kkt = kkt_extract(u, g)
    report.emit_plot_data({"u": u, "p": p, "mu_a": kkt.mu_a, "mu_b": kkt.mu_b}, "controls", out)
    report.emit_plot_data(hist, "log", out)
    J, _ = evaluate_cost(u, problem)
    return [
        f"converged {str(hist.converged).lower()}",
        f"message {hist.message}",
        f"iterations {len(hist) - 1}",
        f"J {J!r}",
        f"kkt_residual {kkt.max_residual!r}",
    ]


def cmd_optimize(sc: Scenario, out: Path, args) -> int:
    solver = args.solver or sc.solver
    problem = sc.problem()
    u, hist = _solve(sc, problem, solver)
    lines = [f"solver {solver}"] + _emit_solution(problem, u, hist, out)
    _write(out / "summary.txt", lines)
    print("\n".join(lines))
    return 0


def cmd_verify(sc: Scenario, out: Path, args) -> int:
    problem = sc.problem()
    checks = [check_divergence(problem.fields, _field_box(sc), seed=args.seed)]
    u0 = sc.grid().values
    st = problem.state(u0)
    ref = problem.target.forward if sc.target_mode == "reference" else st
    checks.append(check_liouville(ref, sc.liouville_tol))
    checks += check_conservation(ref, exact_l2=sc.initial_profile().lp_norm(2.0))
    checks.append(check_gradient(problem, sc.n_checks, sc.fd_alpha, sc.gradient_rtol, seed=args.seed))
    checks.append(check_chi_independence(problem, u0, sc.chi_tol))
    opt, u = check_optimality(problem, u0, sc.pgd_options(), sc.kkt_tol, sc.vi_tol, seed=args.seed)
    checks += opt
    lines = [c.line() for c in checks]
    failed = [c.name for c in checks if not c.passed]
    lines.append("RESULT " + ("PASS" if not failed else "FAIL " + " ".join(failed)))
    _write(out / "verify_report.txt", lines)
    print("\n".join(lines))
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_probe(sc: Scenario, out: Path, args) -> int:
    problem = sc.problem()
    res = uniqueness_probe(problem, args.starts, seed=args.seed, theta=sc.fp_theta, tol=sc.fp_tol,
                           max_iter=sc.fp_max_iter)
    rows = []
    for j, (u, h) in enumerate(zip(res.solutions, res.histories)):
        for i in range(u.n_coils):
            for m in range(u.n_intervals):
                rows.append((j, i, m, u.t_mid[m], u.values[i, m], int(h.converged), len(h)))
    report.write_table(out / "uniqueness.dat", ["start", "i", "m", "t_mid", "u", "converged", "sweeps"], rows)
    lines = [f"starts {args.starts}", f"converged {str(res.converged).lower()}", f"max_distance {res.max_distance!r}"]
    _write(out / "uniqueness.txt", lines)
    print("\n".join(lines))
    return 0


def cmd_ssc(sc: Scenario, out: Path, args) -> int:
    problem = sc.problem()
    u, hist = _solve(sc, problem, args.solver or sc.solver)
    res = ssc_sample_check(u, problem, n_dirs=args.dirs, seed=args.seed)
    report.write_table(out / "ssc.dat", ["dir", "quotient"], list(enumerate(res.quotients)))
    lines = _emit_solution(problem, u, hist, out)
    lines += [f"directions {res.n_used}", f"min_quotient {res.min_quotient!r}"]
    if res.notice:
        lines.append(f"notice {res.notice}")
    _write(out / "ssc.txt", lines)
    print("\n".join(lines))
    return 0


COMMANDS = {
    "fields": cmd_fields,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "verify": cmd_verify,
    "probe-uniqueness": cmd_probe,
    "ssc": cmd_ssc,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", nargs="?", help="scenario file (default: the packaged default scenario)")
    common.add_argument("-o", "--out", default="vpcoil_out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="seed for randomized checks (default: scenario seed)")
    common.add_argument("--workers", type=int, default=None, help=f"worker threads (default: ${WORKERS_ENV})")

    ap = argparse.ArgumentParser(prog="vpcoil", description="Coil-current control of a Vlasov-Poisson plasma.")
    sub = ap.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    p = sub.add_parser("fields", parents=[common], help="tabulate coil fields and check their divergence")
    p.add_argument("--spacing", type=float, default=0.125)
    p = sub.add_parser("simulate", parents=[common], help="forward run with diagnostics")
    p.add_argument("--control", choices=("reference", "initial"), default="reference")
    p.add_argument("--costate", action="store_true", help="also solve and dump the costate")
    p = sub.add_parser("optimize", parents=[common], help="solve the control problem")
    p.add_argument("--solver", choices=("pgd", "fixed-point"), default=None)
    sub.add_parser("verify", parents=[common], help="run the verification suite")
    p = sub.add_parser("probe-uniqueness", parents=[common], help="fixed-point sweeps from several starts")
    p.add_argument("--starts", type=int, default=4)
    p = sub.add_parser("ssc", parents=[common], help="sampled second-order check at the computed optimum")
    p.add_argument("--dirs", type=int, default=5)
    p.add_argument("--solver", choices=("pgd", "fixed-point"), default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _set_workers(args.workers)
        sc = load_scenario(args.scenario or default_scenario_path())
        if args.seed is None:
            args.seed = sc.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scenario.ini").write_text(dump_scenario(sc))
        return COMMANDS[args.command](sc, out, args)
    except VPCoilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
