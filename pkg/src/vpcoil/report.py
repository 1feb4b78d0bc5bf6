"""Plot-ready text tables and matching figures.

Tables are space-delimited with a one-line header and round-trip decimal
numbers.  Figures are rendered with the Agg backend and saved without
metadata so identical inputs give identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .control import ControlGrid  # noqa: E402
from .errors import PreconditionError  # noqa: E402
from .solvers import SolveHistory  # noqa: E402
from .transport import StateTrajectory  # noqa: E402

KINDS = ("controls", "log", "support", "phase")

_PNG_META = {"Software": None}


def _cell(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    width = len(header)
    with open(path, "w") as fh:
        fh.write(" ".join(header) + "\n")
        for row in rows:
            if len(row) != width:
                raise PreconditionError(f"row has {len(row)} fields, header has {width}")
            fh.write(" ".join(_cell(x) for x in row) + "\n")
    return path


def read_table(path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split()
    data = np.array([[float(t) for t in ln.split()] for ln in lines[1:]]).reshape(-1, len(header))
    return header, data


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def control_rows(u: ControlGrid, p=None, mu_a=None, mu_b=None) -> list[tuple]:
    zeros = np.zeros_like(u.values)
    p = zeros if p is None else np.asarray(p)
    mu_a = zeros if mu_a is None else np.asarray(mu_a)
    mu_b = zeros if mu_b is None else np.asarray(mu_b)
    rows = []
    for i in range(u.n_coils):
        for m in range(u.n_intervals):
            rows.append((i, m, u.t_mid[m], u.values[i, m], u.lower[i, m], u.upper[i, m], p[i, m], mu_a[i, m],
                         mu_b[i, m]))
    return rows


def _controls(data, out: Path, stem: str, plot: bool) -> list[Path]:
    if isinstance(data, ControlGrid):
        data = {"u": data}
    u: ControlGrid = data["u"]
    header = ["i", "m", "t_mid", "u", "a", "b", "p", "mu_a", "mu_b"]
    files = [write_table(out / f"{stem}.dat", header, control_rows(u, data.get("p"), data.get("mu_a"),
                                                                     data.get("mu_b")))]
    if plot:
        fig, axes = plt.subplots(u.n_coils, 1, figsize=(6, 1.8 * u.n_coils + 0.6), sharex=True, squeeze=False)
        edges = np.linspace(0.0, u.T, u.n_intervals + 1)
        for i, ax in enumerate(axes[:, 0]):
            ax.stairs(u.values[i], edges, color="C0", label="u")
            for bound in (u.lower[i], u.upper[i]):
                if np.all(np.isfinite(bound)):
                    ax.stairs(bound, edges, color="0.5", linestyle="--")
            ax.set_ylabel(f"coil {i}")
        axes[-1, 0].set_xlabel("t")
        fig.tight_layout()
        files.append(_save(fig, out / f"{stem}.png"))
    return files


def _log(hist: SolveHistory, out: Path, stem: str, plot: bool) -> list[Path]:
    header = ["iter", "J", "grad_norm", "step", "n_backtracks"]
    rows = [(r.iter, r.J, r.grad_norm, r.step, r.n_backtracks) for r in hist.records]
    files = [write_table(out / f"{stem}.dat", header, rows)]
    if plot:
        fig, (a1, a2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
        if rows:
            it = [r[0] for r in rows]
            a1.plot(it, [r[1] for r in rows], "o-", ms=3)
            a2.semilogy(it, np.maximum([r[2] for r in rows], 1e-300), "o-", ms=3)
        a1.set_ylabel("J")
        a2.set_ylabel("residual")
        a2.set_xlabel("iteration")
        fig.tight_layout()
        files.append(_save(fig, out / f"{stem}.png"))
    return files


def _support(st: StateTrajectory, out: Path, stem: str, plot: bool) -> list[Path]:
    header = ["t", "R_x", "R_z", "det_dev"]
    rows = list(zip(st.times, st.support_x, st.support_z, st.det_dev))
    files = [write_table(out / f"{stem}.dat", header, rows)]
    if plot:
        fig, (a1, a2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
        a1.plot(st.times, st.support_x, label="|x| max")
        a1.plot(st.times, st.support_z, label="|z| max")
        a1.legend()
        a2.semilogy(st.times, np.maximum(st.det_dev, 1e-17))
        a2.set_ylabel("|det J - 1|")
        a2.set_xlabel("t")
        fig.tight_layout()
        files.append(_save(fig, out / f"{stem}.png"))
    return files


def _phase(data, out: Path, stem: str, plot: bool) -> list[Path]:
    st: StateTrajectory = data["state"]
    steps = data.get("steps") or [0, st.steps // 2, st.steps]
    header = ["t", "k", "x1", "x2", "x3", "v1", "v2", "v3", "f0"]
    rows = []
    for n in steps:
        for k in range(st.ensemble.n):
            rows.append((st.times[n], k, *st.z[n, k], st.ensemble.f0[k]))
    files = [write_table(out / f"{stem}.dat", header, rows)]
    if plot:
        fig, axes = plt.subplots(1, len(steps), figsize=(3.2 * len(steps), 3.2), squeeze=False)
        for ax, n in zip(axes[0], steps):
            ax.scatter(st.z[n, :, 0], st.z[n, :, 3], c=st.ensemble.f0, s=4, cmap="viridis")
            ax.set_title(f"t = {st.times[n]:.3g}")
            ax.set_xlabel("x1")
        axes[0, 0].set_ylabel("v1")
        fig.tight_layout()
        files.append(_save(fig, out / f"{stem}.png"))
    return files


def emit_plot_data(data, kind: str, out_dir, stem: str | None = None, plot: bool = True) -> list[Path]:
    """Write the table for ``kind`` (and a PNG when ``plot``); returns the paths.

    ``controls``: a ControlGrid or a dict with ``u`` and optional ``p``,
    ``mu_a``, ``mu_b``.  ``log``: a SolveHistory.  ``support``: a state
    trajectory.  ``phase``: a dict with ``state`` and optional ``steps``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or kind
    if kind == "controls":
        return _controls(data, out, stem, plot)
    if kind == "log":
        return _log(data, out, stem, plot)
    if kind == "support":
        return _support(data, out, stem, plot)
    if kind == "phase":
        return _phase(data if isinstance(data, dict) else {"state": data}, out, stem, plot)
    raise PreconditionError(f"unknown plot kind {kind!r}; expected one of {', '.join(KINDS)}")
