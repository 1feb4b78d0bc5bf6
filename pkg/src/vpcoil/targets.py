"""Desired distributions f_d for the tracking term.

A target exposes values and gradients at phase points, Hessian-vector
products, and its squared L2 norm.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .coils import CoilFieldSet
from .control import ControlGrid
from .profiles import BumpProfile
from .transport import ParticleEnsemble, StateTrajectory, advect_tracers, integrate_forward


class ZeroTarget:
    """f_d = 0."""

    def evaluate(self, z):
        z = np.asarray(z, dtype=float)
        return np.zeros(z.shape[:-1]), np.zeros_like(z)

    def hessp(self, z, dz):
        return np.zeros_like(np.asarray(dz, dtype=float))

    def norm_sq(self) -> float:
        return 0.0


class AnalyticTarget:
    """A bump profile used directly as f_d."""

    def __init__(self, profile: BumpProfile):
        self.profile = profile

    def evaluate(self, z):
        return self.profile.value(z), self.profile.grad(z)

    def hessp(self, z, dz):
        return self.profile.hessp(z, dz)

    def norm_sq(self) -> float:
        return self.profile.lp_norm(2.0) ** 2


class ReferenceTarget:
    """f_d = f(T) of a reference run, evaluated by pulling points back.

    The reference ensemble is integrated to T under ``control`` and then
    backward to 0; points are carried back through the recorded backward
    stages as tracers and the initial profile is evaluated at their feet.
    """

    def __init__(self, profile: BumpProfile, ensemble: ParticleEnsemble, fields: CoilFieldSet,
                 control: ControlGrid, T: float, steps: int, eps: float, cache_size: int = 4):
        self.profile = profile
        self.control = control
        self.forward: StateTrajectory = integrate_forward(ensemble, control, fields, T, steps, eps)
        back_ens = ensemble.restarted(self.forward.final)
        self.backward: StateTrajectory = integrate_forward(back_ens, control, fields, T, steps, eps, t0=T,
                                                           backward=True)
        self._norm_sq = float(np.sum(ensemble.cell_volume * ensemble.f0**2))
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    def pull_back(self, z):
        z = np.ascontiguousarray(np.asarray(z, dtype=float).reshape(-1, 6))
        key = z.tobytes()
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        tr = advect_tracers(self.backward, z)
        self._cache[key] = (tr.z, tr.J)
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return tr.z, tr.J

    def evaluate(self, z):
        shape = np.shape(z)[:-1]
        y0, DY = self.pull_back(z)
        val = self.profile.value(y0)
        grad = np.einsum("nji,nj->ni", DY, self.profile.grad(y0))
        return val.reshape(shape), grad.reshape(shape + (6,))

    def hessp(self, z, dz):
        z = np.asarray(z, dtype=float).reshape(-1, 6)
        dz = np.asarray(dz, dtype=float).reshape(-1, 6)
        tr = advect_tracers(self.backward, z, tangent=dz)
        y0, DY, dDY = tr.z, tr.J, tr.dJ
        Hy = self.profile.hessp(y0, np.einsum("nij,nj->ni", DY, dz))
        return np.einsum("nji,nj->ni", DY, Hy) + np.einsum("nji,nj->ni", dDY, self.profile.grad(y0))

    def norm_sq(self) -> float:
        return self._norm_sq
