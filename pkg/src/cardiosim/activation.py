"""Active force generation driven by the calcium transient.

A single permissivity state s tracks crossbridge recruitment:

    ds/dt = k_on g(ca) fl(SL) fv(dSL/dt) (1 - s) - k_off s

with a Hill-type calcium sensitivity g, a raised-cosine force-length curve
fl and a linear force-velocity correction fv. Active tension is
T_act = a_xb * perm * s and enters the solid as a rank-one stress along the
deformed fiber direction.

The sarcomere length SL = SL0 sqrt(I4f) is computed per cell from the
displacement and regularized by a screened Laplacian before being fed to
the ODE, which removes the checkerboard noise a piecewise-constant stretch
field would otherwise inject into the force.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from .fem import FunctionSpace, assemble_load, assemble_mass, assemble_stiffness


@dataclass
class ActivationParams:
    a_xb: float = 8.9491e8      # crossbridge stiffness scale [Pa]
    perm: float = 1.6e-4        # permissivity scale, sets peak tension
    sl_0: float = 2.1           # slack sarcomere length [um]
    k_on: float = 30.0          # recruitment rate [1/s]
    k_off: float = 8.0          # detachment rate [1/s]
    ca50: float = 0.4           # half-activation calcium level
    hill: float = 2.0
    sl_opt: float = 2.2         # optimal sarcomere length [um]
    sl_width: float = 0.7       # force-length half-width [um]
    fv_slope: float = 0.25      # force-velocity slope [s/um]
    delta_sl: float = 2.0e-3    # stretch regularization length [m]


class ActivationModel:
    def __init__(self, params: ActivationParams | None = None):
        self.p = params or ActivationParams()

    def calcium_sensitivity(self, ca):
        ca = np.clip(np.asarray(ca, dtype=float), 0.0, None)
        n = self.p.hill
        return ca**n / (ca**n + self.p.ca50**n)

    def force_length(self, sl):
        x = (np.asarray(sl, dtype=float) - self.p.sl_opt) / self.p.sl_width
        return np.where(np.abs(x) < 1.0, 0.5 * (1.0 + np.cos(np.pi * x)), 0.0)

    def force_velocity(self, dsl_dt):
        # shortening (negative velocity) depresses force, stretch saturates
        return np.clip(1.0 + self.p.fv_slope * np.asarray(dsl_dt, dtype=float),
                       0.0, 1.4)

    def recruitment_rate(self, ca, sl, dsl_dt):
        return (self.p.k_on * self.calcium_sensitivity(ca)
                * self.force_length(sl) * self.force_velocity(dsl_dt))

    def step(self, s, ca, sl, dsl_dt, dt):
        """Forward Euler update; s stays in [0, 1] for dt below 1/k."""
        r_on = self.recruitment_rate(ca, sl, dsl_dt)
        s_new = s + dt * (r_on * (1.0 - s) - self.p.k_off * s)
        return np.clip(s_new, 0.0, 1.0)

    def steady_state(self, ca, sl, dsl_dt=0.0):
        r_on = self.recruitment_rate(ca, sl, dsl_dt)
        return r_on / (r_on + self.p.k_off)

    def tension(self, s):
        """Active tension [Pa]."""
        return self.p.a_xb * self.p.perm * np.asarray(s, dtype=float)


def sarcomere_length(F, f0, sl_0: float = 2.1):
    """Per-cell SL = SL0 sqrt(I4f), I4f = |F f0|^2 [um]."""
    Ff = np.einsum("tij,tj->ti", F, f0)
    return sl_0 * np.sqrt(np.einsum("ti,ti->t", Ff, Ff))


class StretchRegularizer:
    """Screened Laplacian smoother: (I - delta^2 Lap) sl = source, Neumann.

    Maps a per-cell stretch field to nodal values on a linear space. The
    factorization is reused across time steps since the operator lives on
    the reference mesh. Constants pass through unchanged.
    """

    def __init__(self, space: FunctionSpace, delta: float):
        if space.degree != 1 or space.ncomp != 1:
            raise ValueError("stretch regularization uses a scalar P1 space")
        self.space = space
        self.delta = float(delta)
        M = assemble_mass(space)
        K = assemble_stiffness(space)
        self._lu = splu((M + self.delta**2 * K).tocsc())

    def smooth(self, cell_values: np.ndarray) -> np.ndarray:
        b = assemble_load(self.space, np.asarray(cell_values, dtype=float))
        return self._lu.solve(b)

    def cell_average(self, nodal: np.ndarray) -> np.ndarray:
        return nodal[self.space.mesh.tets].mean(axis=1)


def active_pk1(F, f0, tension):
    """First Piola-Kirchhoff active stress: T (F f0 x f0) / sqrt(I4f)."""
    Ff = np.einsum("tij,tj->ti", F, f0)
    sqrt_i4f = np.sqrt(np.einsum("ti,ti->t", Ff, Ff))
    scale = np.asarray(tension, dtype=float) / sqrt_i4f
    return scale[:, None, None] * np.einsum("ti,tj->tij", Ff, f0)
