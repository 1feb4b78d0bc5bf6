"""Piecewise-constant coil currents on a uniform time grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError


def project_box(xi, lo, hi):
    """Clamp ``xi`` into ``[lo, hi]`` elementwise; ``lo == hi`` cells give ``lo``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise PreconditionError("project_box needs lo <= hi")
    out = np.minimum(np.maximum(xi, lo), hi)
    out = np.where(lo == hi, lo, out)
    return float(out) if np.ndim(out) == 0 else out


def _per_cell(value, n: int, m: int, what: str) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return np.full((n, m), float(a))
    if a.ndim == 1 and len(a) == n:
        return np.repeat(a[:, None], m, axis=1)
    if a.shape == (n, m):
        return a.copy()
    raise PreconditionError(f"{what} must be a scalar, a per-coil list of {n} or an {n}x{m} array")


@dataclass
class ControlGrid:
    """Currents ``values[i, m]`` on ``M`` equal intervals of ``[0, T]`` with box bounds."""

    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    T: float

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float, ndmin=2)
        n, m = self.values.shape
        self.lower = _per_cell(self.lower, n, m, "lower bound")
        self.upper = _per_cell(self.upper, n, m, "upper bound")
        if not self.T > 0:
            raise PreconditionError("T must be > 0")
        if np.any(self.lower > 0) or np.any(self.upper < 0):
            raise PreconditionError("bounds must satisfy a_i <= 0 <= b_i in every cell")

    @classmethod
    def zeros(cls, n_coils: int, n_intervals: int, T: float, lower=-np.inf, upper=np.inf) -> "ControlGrid":
        return cls(np.zeros((n_coils, n_intervals)), lower, upper, T)

    @property
    def n_coils(self) -> int:
        return self.values.shape[0]

    @property
    def n_intervals(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.T / self.n_intervals

    @property
    def t_mid(self) -> np.ndarray:
        return (np.arange(self.n_intervals) + 0.5) * self.dt

    def interval_of(self, t: float) -> int:
        """Index of the left-closed interval containing ``t`` (``t = T`` maps to the last)."""
        m = int(np.floor(t / self.dt))
        return min(max(m, 0), self.n_intervals - 1)

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.interval_of(t)]

    def with_values(self, values) -> "ControlGrid":
        return ControlGrid(np.array(values, dtype=float).reshape(self.values.shape), self.lower, self.upper, self.T)

    def projected(self, values=None) -> "ControlGrid":
        v = self.values if values is None else np.asarray(values, dtype=float)
        return self.with_values(project_box(v, self.lower, self.upper))

    def is_admissible(self, atol: float = 0.0) -> bool:
        v = self.values
        return bool(np.all(v >= self.lower - atol) and np.all(v <= self.upper + atol))

    def inner(self, a, b) -> float:
        """L2([0,T]) pairing of two per-cell arrays by the rectangle rule."""
        return float(np.sum(np.asarray(a) * np.asarray(b)) * self.dt)

    def norm(self, a=None) -> float:
        a = self.values if a is None else a
        return float(np.sqrt(self.inner(a, a)))

    def coil_norms(self, a=None) -> np.ndarray:
        a = self.values if a is None else np.asarray(a)
        return np.sqrt(np.sum(a * a, axis=1) * self.dt)
