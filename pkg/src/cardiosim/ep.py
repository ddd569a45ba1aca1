"""Cardiac electrophysiology: monodomain equation with a phenomenological
ionic model.

The transmembrane potential lives on quadratic elements; the ionic model is
a two-gate variant of a cubic excitable model with an explicit calcium-like
concentration that drives force generation downstream. Conductivities are
stored pre-divided by the surface-to-volume ratio and membrane capacitance,
so they carry units of m^2/s and currents are in mV/s.

The deformation enters through the lagged deformation gradient: the
conductivity tensor is built from pushed-forward fiber directions and the
equation is weighted by the Jacobian determinant, so a stretched wall
conducts differently from the reference one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .fem import FunctionSpace, assemble_mass, assemble_stiffness


@dataclass
class IonicParams:
    """Two-gate excitable model (times in seconds, voltages in mV)."""

    v_rest: float = -84.0
    v_peak: float = 40.0
    tau_in: float = 0.3e-3
    tau_out: float = 6.0e-3
    tau_open: float = 120.0e-3
    tau_close: float = 150.0e-3
    u_gate: float = 0.13
    tau_w: float = 300.0e-3     # slow outward-current gate
    w_frac: float = 0.2         # fraction of outward current modulated by w
    tau_ca: float = 60.0e-3     # calcium-like transient time constant
    ca_amp: float = 1.2         # drives the steady-state calcium level

    @property
    def v_amp(self) -> float:
        return self.v_peak - self.v_rest


class IonicModel:
    """State: potential v plus (h, w, ca) arrays of matching shape."""

    def __init__(self, params: IonicParams | None = None):
        self.p = params or IonicParams()

    def resting_state(self, n: int):
        return {
            "v": np.full(n, self.p.v_rest),
            "h": np.ones(n),
            "w": np.ones(n),
            "ca": np.zeros(n),
        }

    def _u(self, v):
        return (np.asarray(v) - self.p.v_rest) / self.p.v_amp

    def current(self, v, h, w, ca):
        """I_ion [mV/s]; enters the voltage equation with a plus sign."""
        p = self.p
        u = self._u(v)
        inward = h * u * u * (1.0 - u) / p.tau_in
        outward = u * (1.0 - p.w_frac + p.w_frac * w) / p.tau_out
        return -p.v_amp * (inward - outward)

    def step_gates(self, v, h, w, ca, dt):
        """Implicit gate update (linear per node) and explicit calcium."""
        p = self.p
        u = self._u(v)
        excited = u >= p.u_gate
        h_inf = np.where(excited, 0.0, 1.0)
        tau_h = np.where(excited, p.tau_close, p.tau_open)
        h_new = (h + dt * h_inf / tau_h) / (1.0 + dt / tau_h)
        w_new = (w + dt * h_inf / p.tau_w) / (1.0 + dt / p.tau_w)
        ca_ss = p.ca_amp * np.clip(u, 0.0, None) ** 2
        ca_new = ca + dt * (ca_ss - ca) / p.tau_ca
        return h_new, w_new, ca_new

    def step_0d(self, state, dt, i_app=0.0):
        """Pointwise (space-free) IMEX step, used for initialization."""
        v, h, w, ca = state["v"], state["h"], state["w"], state["ca"]
        h, w, ca = self.step_gates(v, h, w, ca, dt)
        v = v + dt * (-self.current(v, h, w, ca) + i_app)
        return {"v": v, "h": h, "w": w, "ca": ca}


def limit_cycle_state(model: IonicModel, period: float, n_beats: int = 10,
                      dt: float = 1e-4, stim_amp: float = 25710.0,
                      stim_dur: float = 3e-3):
    """Pace a single cell for n_beats and return the pre-stimulus state.

    Used to initialize tissue simulations on a converged beat rather than
    from the pristine resting state.
    """
    state = model.resting_state(1)
    steps = int(round(period / dt))
    for _ in range(n_beats):
        for i in range(steps):
            i_app = stim_amp if i * dt < stim_dur else 0.0
            state = model.step_0d(state, dt, i_app)
    return state


def conductivity_tensor(f0, s0, n0, sigma, F=None):
    """Per-cell conductivity [m^2/s]: sum of rank-one terms along the
    pushed-forward frame, each normalized by the stretched length squared."""
    nt = len(f0)
    D = np.zeros((nt, 3, 3))
    for e, s in zip((f0, s0, n0), sigma):
        Fe = e if F is None else np.einsum("tij,tj->ti", F, e)
        norm2 = np.einsum("ti,ti->t", Fe, Fe)
        D += s * np.einsum("ti,tj->tij", Fe, Fe) / norm2[:, None, None]
    return D


def pullback_tensor(D, F=None, J=None):
    """J F^-1 D F^-T, the diffusion tensor seen on the reference mesh."""
    if F is None:
        return D if J is None else J[:, None, None] * D
    Finv = np.linalg.inv(F)
    out = np.einsum("tik,tkl,tjl->tij", Finv, D, Finv)
    if J is None:
        J = np.linalg.det(F)
    return J[:, None, None] * out


def gaussian_stimulus(space: FunctionSpace, centers, amplitude: float = 25710.0,
                      sigma: float = 2.5e-3, duration: float = 3e-3,
                      start: float = 0.0):
    """Nodal applied current: sum of Gaussians in space, square pulse in time.

    amplitude is A/C_m in mV/s; the spatial profile is exp(-(d/sigma)^2).
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    x = space.node_coords
    profile = np.zeros(space.num_nodes)
    for c in centers:
        d2 = np.sum((x - c) ** 2, axis=1)
        profile += amplitude * np.exp(-d2 / sigma**2)

    def i_app(t):
        if start < t <= start + duration + 1e-12:
            return profile
        return np.zeros(space.num_nodes)

    return i_app


class MonodomainStepper:
    """Semi-implicit monodomain on quadratic elements.

    Diffusion is implicit with lagged geometry, the ionic current is
    evaluated at the nodes and applied through the consistent mass matrix
    (ionic current interpolation). The factorized system matrix is reused
    until the geometry is updated.
    """

    def __init__(self, space: FunctionSpace, f0, s0, n0, sigma,
                 ionic: IonicModel | None = None, dt: float = 1e-4):
        if space.degree != 2 or space.ncomp != 1:
            raise ValueError("monodomain runs on a scalar quadratic space")
        self.space = space
        self.f0, self.s0, self.n0 = f0, s0, n0
        self.sigma = tuple(sigma)
        self.ionic = ionic or IonicModel()
        self.dt = dt
        self._lu = None
        self.update_geometry(F=None, J=None)

    def update_geometry(self, F=None, J=None):
        """Rebuild operators for a new lagged deformation state."""
        D = conductivity_tensor(self.f0, self.s0, self.n0, self.sigma, F)
        Dref = pullback_tensor(D, F, J)
        self.K = assemble_stiffness(self.space, Dref)
        self.M = assemble_mass(self.space, coeff=J, degree=4)
        A = (self.M / self.dt + self.K).tocsc()
        self._lu = splu(A)

    def step(self, state, t, i_app=None):
        """Advance one dt; state holds nodal v, h, w, ca."""
        v, h, w, ca = state["v"], state["h"], state["w"], state["ca"]
        dt = self.dt
        h, w, ca = self.ionic.step_gates(v, h, w, ca, dt)
        reaction = -self.ionic.current(v, h, w, ca)
        if i_app is not None:
            reaction = reaction + i_app(t + dt)
        rhs = self.M @ (v / dt + reaction)
        v_new = self._lu.solve(rhs)
        if not np.all(np.isfinite(v_new)):
            raise FloatingPointError("monodomain solution became non-finite")
        return {"v": v_new, "h": h, "w": w, "ca": ca}


def activation_times(times, v_history, threshold: float = -20.0):
    """First crossing time of the threshold per node, NaN if never reached."""
    v_hist = np.asarray(v_history)
    crossed = v_hist >= threshold
    first = np.argmax(crossed, axis=0)
    act = np.asarray(times, dtype=float)[first]
    act[~crossed.any(axis=0)] = np.nan
    return act
