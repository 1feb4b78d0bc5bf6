"""Scenario files: a flat ``key = value`` dialect with fixed sections.

Sections are ``[coils] [initial] [target] [control] [discretization]
[tolerances]``.  Unknown sections or keys are errors, every error names the
file line it came from, and :func:`dump_scenario` writes a canonical text
that loads back to an equal :class:`Scenario`.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .coils import CoilFieldSet, CoilGeometry, read_coil_file
from .control import ControlGrid
from .errors import ConfigurationError, ScenarioParseError
from .problem import ControlProblem
from .profiles import BumpProfile
from .solvers import PGDOptions
from .targets import AnalyticTarget, ReferenceTarget, ZeroTarget
from .transport import ParticleEnsemble, sample_initial

BUILTIN_PREFIX = "builtin:"
SECTIONS = ("coils", "initial", "target", "control", "discretization", "tolerances")
_REQUIRED = object()


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _float(text: str) -> float:
    vals = _floats(text)
    if len(vals) != 1:
        raise ValueError(f"expected one number, got {len(vals)}")
    return vals[0]


def _vec3(text: str) -> tuple[float, float, float]:
    vals = _floats(text)
    if len(vals) != 3:
        raise ValueError(f"expected 3 numbers, got {len(vals)}")
    return vals


def _int(text: str) -> int:
    return int(text.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() == "auto" else _float(text)


def _word(text: str) -> str:
    t = text.strip()
    if not t or len(t.split()) != 1:
        raise ValueError("expected a single word")
    return t


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# section -> key -> (attribute, parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "coils": {
        "file": ("coil_file", str.strip, _REQUIRED),
        "reg": ("coil_reg", _opt_float, None),
        "gauss_points": ("gauss_points", _int, 4),
    },
    "initial": {
        "amplitude": ("f0_amplitude", _float, _REQUIRED),
        "center_x": ("f0_center_x", _vec3, (0.0, 0.0, 0.0)),
        "center_v": ("f0_center_v", _vec3, (0.0, 0.0, 0.0)),
        "radius_x": ("f0_radius_x", _float, _REQUIRED),
        "radius_v": ("f0_radius_v", _float, _REQUIRED),
        "resolution": ("resolution", _int, _REQUIRED),
        "max_particles": ("max_particles", _int, 4096),
    },
    "target": {
        "mode": ("target_mode", _word, _REQUIRED),
        "reference_control": ("reference_control", _floats, ()),
        "amplitude": ("fd_amplitude", _float, 0.0),
        "center_x": ("fd_center_x", _vec3, (0.0, 0.0, 0.0)),
        "center_v": ("fd_center_v", _vec3, (0.0, 0.0, 0.0)),
        "radius_x": ("fd_radius_x", _float, 1.0),
        "radius_v": ("fd_radius_v", _float, 1.0),
    },
    "control": {
        "T": ("T", _float, _REQUIRED),
        "intervals": ("intervals", _int, _REQUIRED),
        "lambda": ("lam", _floats, _REQUIRED),
        "lower": ("lower", _floats, (float("-inf"),)),
        "upper": ("upper", _floats, (float("inf"),)),
        "initial": ("initial_control", _floats, (0.0,)),
    },
    "discretization": {
        "steps": ("steps", _int, _REQUIRED),
        "eps": ("eps", _opt_float, None),
        "chi_factor": ("chi_factor", _float, 1.0),
        "seed": ("seed", _int, 0),
    },
    "tolerances": {
        "solver": ("solver", _word, "pgd"),
        "pgd_tol": ("pgd_tol", _float, 1e-7),
        "pgd_max_iter": ("pgd_max_iter", _int, 300),
        "armijo_c": ("armijo_c", _float, 1e-4),
        "armijo_shrink": ("armijo_shrink", _float, 0.5),
        "step0": ("step0", _float, 1.0),
        "bb_step": ("bb_step", _bool, True),
        "max_backtracks": ("max_backtracks", _int, 40),
        "fp_tol": ("fp_tol", _float, 1e-9),
        "fp_theta": ("fp_theta", _float, 1.0),
        "fp_max_iter": ("fp_max_iter", _int, 100),
        "fd_alpha": ("fd_alpha", _float, 1e-3),
        "gradient_rtol": ("gradient_rtol", _float, 1e-3),
        "liouville_tol": ("liouville_tol", _float, 1e-6),
        "chi_tol": ("chi_tol", _float, 1e-6),
        "kkt_tol": ("kkt_tol", _float, 1e-5),
        "vi_tol": ("vi_tol", _float, 1e-6),
        "n_checks": ("n_checks", _int, 5),
    },
}


@dataclass
class Scenario:
    coil_file: str
    f0_amplitude: float
    f0_radius_x: float
    f0_radius_v: float
    resolution: int
    target_mode: str
    T: float
    intervals: int
    lam: tuple
    steps: int
    coil_reg: float | None = None
    gauss_points: int = 4
    f0_center_x: tuple = (0.0, 0.0, 0.0)
    f0_center_v: tuple = (0.0, 0.0, 0.0)
    max_particles: int = 4096
    reference_control: tuple = ()
    fd_amplitude: float = 0.0
    fd_center_x: tuple = (0.0, 0.0, 0.0)
    fd_center_v: tuple = (0.0, 0.0, 0.0)
    fd_radius_x: float = 1.0
    fd_radius_v: float = 1.0
    lower: tuple = (float("-inf"),)
    upper: tuple = (float("inf"),)
    initial_control: tuple = (0.0,)
    eps: float | None = None
    chi_factor: float = 1.0
    seed: int = 0
    solver: str = "pgd"
    pgd_tol: float = 1e-7
    pgd_max_iter: int = 300
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    step0: float = 1.0
    bb_step: bool = True
    max_backtracks: int = 40
    fp_tol: float = 1e-9
    fp_theta: float = 1.0
    fp_max_iter: int = 100
    fd_alpha: float = 1e-3
    gradient_rtol: float = 1e-3
    liouville_tol: float = 1e-6
    chi_tol: float = 1e-6
    kkt_tol: float = 1e-5
    vi_tol: float = 1e-6
    n_checks: int = 5
    base_dir: str = field(default=".", compare=False)

    # -- derived objects -------------------------------------------------

    def coil_path(self) -> Path:
        if self.coil_file.startswith(BUILTIN_PREFIX):
            name = self.coil_file[len(BUILTIN_PREFIX):]
            return Path(str(resources.files("vpcoil") / "data" / name))
        p = Path(self.coil_file)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def coils(self) -> list[CoilGeometry]:
        return read_coil_file(self.coil_path())

    def fields(self) -> CoilFieldSet:
        return CoilFieldSet(self.coils(), reg=self.coil_reg, n_gauss=self.gauss_points)

    def initial_profile(self) -> BumpProfile:
        return BumpProfile(self.f0_amplitude, self.f0_center_x, self.f0_center_v, self.f0_radius_x, self.f0_radius_v)

    def target_profile(self) -> BumpProfile:
        return BumpProfile(self.fd_amplitude, self.fd_center_x, self.fd_center_v, self.fd_radius_x, self.fd_radius_v)

    def ensemble(self) -> ParticleEnsemble:
        return sample_initial(self.initial_profile(), self.resolution, self.max_particles)

    def softening(self, ensemble: ParticleEnsemble | None = None) -> float:
        if self.eps is not None:
            return self.eps
        return float((ensemble or self.ensemble()).spacing[0])

    def n_coils(self) -> int:
        return len(self.coils())

    def _cells(self, values, what: str) -> np.ndarray:
        n, m = self.n_coils(), self.intervals
        a = np.asarray(values, dtype=float)
        if a.size == 1:
            return np.full((n, m), a.item())
        if a.size == n:
            return np.repeat(a[:, None], m, axis=1)
        if a.size == n * m:
            return a.reshape(n, m)
        raise ConfigurationError(f"{what} needs 1, {n} or {n * m} values, got {a.size}")

    def grid(self, values=None) -> ControlGrid:
        vals = self._cells(self.initial_control if values is None else values, "control")
        return ControlGrid(vals, self._cells(self.lower, "lower"), self._cells(self.upper, "upper"), self.T)

    def lambdas(self) -> np.ndarray:
        lam = np.asarray(self.lam, dtype=float)
        n = self.n_coils()
        if lam.size == 1:
            return np.full(n, lam.item())
        if lam.size != n:
            raise ConfigurationError(f"lambda needs 1 or {n} values, got {lam.size}")
        return lam

    def reference_grid(self) -> ControlGrid:
        vals = self._cells(self.reference_control, "reference_control")
        return ControlGrid(vals, -np.inf, np.inf, self.T)

    def target(self, ensemble: ParticleEnsemble | None = None, fields: CoilFieldSet | None = None):
        if self.target_mode == "zero":
            return ZeroTarget()
        if self.target_mode == "analytic":
            return AnalyticTarget(self.target_profile())
        ensemble = ensemble or self.ensemble()
        fields = fields or self.fields()
        return ReferenceTarget(self.initial_profile(), ensemble, fields, self.reference_grid(), self.T, self.steps,
                               self.softening(ensemble))

    def problem(self, lam=None) -> ControlProblem:
        ens = self.ensemble()
        fs = self.fields()
        target = self.target(ens, fs)
        lam = self.lambdas() if lam is None else lam
        return ControlProblem(ens, fs, target, lam, self.grid(np.zeros(1)), self.steps, self.softening(ens),
                              self.chi_factor)

    def pgd_options(self) -> PGDOptions:
        return PGDOptions(max_iter=self.pgd_max_iter, tol=self.pgd_tol, s0=self.step0, shrink=self.armijo_shrink,
                          c=self.armijo_c, max_backtracks=self.max_backtracks, bb_step=self.bb_step)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    # -- validation --------------------------------------------------------

    def validate(self, where=None) -> None:
        """Check cross-field invariants; ``where(attr)`` maps a field to a line number."""
        loc = where or (lambda attr: None)

        def fail(attr, msg):
            raise ScenarioParseError(msg, loc(attr), None)

        if not self.T > 0:
            fail("T", "T must be > 0")
        if self.intervals < 1:
            fail("intervals", "intervals must be >= 1")
        if self.steps < 1 or self.steps % self.intervals:
            fail("steps", "steps must be a positive multiple of the control intervals")
        if self.resolution < 1:
            fail("resolution", "resolution must be >= 1")
        if self.eps is not None and not self.eps > 0:
            fail("eps", "eps must be > 0")
        if self.chi_factor < 1.0:
            fail("chi_factor", "chi_factor must be >= 1 so the cutoff plateau covers the particles")
        if self.target_mode not in ("zero", "analytic", "reference"):
            fail("target_mode", "target mode must be one of zero, analytic, reference")
        if self.solver not in ("pgd", "fixed-point"):
            fail("solver", "solver must be pgd or fixed-point")
        if not 0 < self.fp_theta <= 1:
            fail("fp_theta", "fp_theta must lie in (0, 1]")
        if not 0 < self.armijo_shrink < 1 or not 0 < self.armijo_c < 1:
            fail("armijo_c", "Armijo parameters need 0 < c < 1 and 0 < shrink < 1")
        try:
            coils = self.coils()
        except (OSError, ConfigurationError, ValueError) as exc:
            fail("coil_file", f"cannot load coil file: {exc}")
        try:
            lo = self._cells(self.lower, "lower")
            hi = self._cells(self.upper, "upper")
            lam = self.lambdas()
            init = self._cells(self.initial_control, "initial")
            if self.target_mode == "reference":
                if not self.reference_control:
                    fail("reference_control", "reference mode needs reference_control")
                self._cells(self.reference_control, "reference_control")
        except ConfigurationError as exc:
            fail("lower", str(exc))
        bad = np.argwhere((lo > 0) | (hi < 0))
        if len(bad):
            i, mm = bad[0]
            fail("lower", f"bounds violate a_i <= 0 <= b_i (coil {i}, interval {mm})")
        if np.any(lam < 0):
            fail("lam", "lambda_i must be >= 0")
        if np.any(init < lo) or np.any(init > hi):
            fail("initial_control", "initial control lies outside the bounds")
        try:
            prof = self.initial_profile()
            if self.target_mode == "analytic":
                self.target_profile()
        except ValueError as exc:
            fail("f0_amplitude", str(exc))
        # particle support must stay clear of the coil curves at t = 0
        fs = CoilFieldSet(coils, reg=self.coil_reg, n_gauss=self.gauss_points)
        d = fs.curve_distance(np.asarray(prof.center_x, float)[None, :]).min()
        if d <= prof.radius_x:
            fail("f0_radius_x", "the initial spatial support touches a coil")


def _line_index(text: str) -> dict[tuple[str, str], int]:
    out: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        mo = re.match(r"^\[(.+)\]$", s)
        if mo:
            section = mo.group(1).strip()
            out[(section, "")] = lineno
        elif section and s and s[0] not in "#;":
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip()
            out.setdefault((section, key), lineno)
    return out


def parse_scenario(text: str, path: str | None = None, base_dir: str = ".") -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text, source=path or "<string>")
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        raise ScenarioParseError(str(exc).splitlines()[0], lineno, path) from None
    lines = _line_index(text)
    kwargs: dict = {}
    attr_line: dict[str, int] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ScenarioParseError(f"unknown section [{sec}]", lines.get((sec, "")), path)
        for key, raw in cp.items(sec):
            lineno = lines.get((sec, key))
            if key not in SCHEMA[sec]:
                raise ScenarioParseError(f"unknown key '{key}' in [{sec}]", lineno, path)
            attr, parser, _ = SCHEMA[sec][key]
            try:
                kwargs[attr] = parser(raw)
            except ValueError as exc:
                raise ScenarioParseError(f"bad value for '{key}' in [{sec}]: {exc}", lineno, path) from None
            attr_line[attr] = lineno
    for sec, keys in SCHEMA.items():
        for key, (attr, _, default) in keys.items():
            if attr not in kwargs and default is _REQUIRED:
                raise ScenarioParseError(f"missing required key '{key}' in [{sec}]", lines.get((sec, "")), path)
    sc = Scenario(**kwargs, base_dir=base_dir)
    sc.validate(lambda attr: attr_line.get(attr))
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario {path}: {exc}") from None
    try:
        return parse_scenario(text, str(path), str(path.parent))
    except ScenarioParseError as exc:
        if exc.path is None:
            exc = ScenarioParseError(exc.message, exc.lineno, str(path))
        raise exc from None


def dump_scenario(sc: Scenario) -> str:
    """Canonical text of ``sc``: every key written, fixed order, round-trip floats."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for key, (attr, _, _) in keys.items():
            out.append(f"{key} = {_fmt(getattr(sc, attr))}")
        out.append("")
    return "\n".join(out)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(sc))


def default_scenario_path(name: str = "default.ini") -> Path:
    return Path(str(resources.files("vpcoil") / "data" / name))


def default_scenario(name: str = "default.ini") -> Scenario:
    return load_scenario(default_scenario_path(name))


__all__ = [
    "Scenario",
    "default_scenario",
    "default_scenario_path",
    "dump_scenario",
    "load_scenario",
    "parse_scenario",
    "save_scenario",
]
