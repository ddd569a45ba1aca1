"""Staggered multiphysics time loop and the monolithic FSI solve.

The FSI problem couples wall elastodynamics with the stabilized fluid step
through interface condensation: fluid velocity dofs on the conforming
interface are identified with (d^{n+1} - d^n)/dt, so the kinematic
condition holds exactly at any Newton iterate, and the fluid momentum rows
of interface nodes are added to the matching solid rows, which enforces
the dynamic condition weakly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fem.linalg import SolverError
from .fluid import FluidSolver, FluidState, apply_dirichlet
from .solid import SolidModel


@dataclass
class SimulationClock:
    dt: float = 2e-4
    n_ep: int = 2
    t_end: float = 0.8
    t_hb: float = 0.8
    t: float = 0.0
    step_index: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.n_ep < 1:
            raise ValueError("dt must be positive and n_ep >= 1")

    @property
    def dt_ep(self) -> float:
        return self.dt / self.n_ep

    @property
    def beat_index(self) -> int:
        return int(self.t / self.t_hb)

    def advance(self):
        self.step_index += 1
        self.t = self.step_index * self.dt

    def done(self) -> bool:
        return self.t >= self.t_end - 1e-12


class FsiProblem:
    """Monolithic solid-fluid step on the current fluid configuration.

    interface_map: (n, 2) pairs (fluid_vertex, solid_vertex) on the
    conforming interface. Unknown layout: [solid d; interior fluid u; p].
    """

    def __init__(self, solid: SolidModel, fluid: FluidSolver, interface_map,
                 newton_tol: float = 1e-6, max_newton: int = 25):
        self.solid = solid
        self.fluid = fluid
        self.newton_tol = newton_tol
        self.max_newton = max_newton
        interface_map = np.asarray(interface_map, dtype=np.int64)
        self.if_fluid = interface_map[:, 0]
        self.if_solid = interface_map[:, 1]
        nvf = fluid.mesh.num_vertices
        nvs = solid.mesh.num_vertices
        mask = np.ones(nvf, dtype=bool)
        mask[self.if_fluid] = False
        self.int_fluid = np.flatnonzero(mask)       # interior fluid nodes
        self.n_int = len(self.int_fluid)
        self.nvf, self.nvs = nvf, nvs
        self.nd = 3 * nvs
        self.nu = 3 * self.n_int
        self.nx = self.nd + self.nu + nvf

        vec = lambda nodes: (3 * np.asarray(nodes)[:, None]
                             + np.arange(3)[None, :]).ravel()
        self.if_fdofs = vec(self.if_fluid)
        self.if_sdofs = vec(self.if_solid)
        self.int_fdofs = vec(self.int_fluid)

        nf = 4 * nvf  # fluid system size (u then p)
        # Q: combined rows <- fluid rows (interface momentum -> solid rows)
        rows = np.concatenate([
            self.if_sdofs,                                   # into d block
            self.nd + np.arange(self.nu),                    # interior u
            self.nd + self.nu + np.arange(nvf)])             # pressure
        cols = np.concatenate([
            self.if_fdofs, self.int_fdofs, 3 * nvf + np.arange(nvf)])
        self.Q = sp.coo_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.nx, nf)).tocsr()
        # selector of the d block from x
        self.Dd = sp.coo_matrix(
            (np.ones(self.nd), (np.arange(self.nd), np.arange(self.nd))),
            shape=(self.nd, self.nx)).tocsr()
        self.Ps = self.Dd.T.tocsr()

        # fluid Dirichlet velocity dofs (walls that are not interface)
        # mapped into the interior-u block of the monolithic vector
        fdofs = np.asarray(fluid.dir_dofs, dtype=np.int64)
        if fdofs.size and self.nu:
            pos = np.searchsorted(self.int_fdofs, fdofs)
            pos = np.clip(pos, 0, self.nu - 1)
            keep = self.int_fdofs[pos] == fdofs
            self.fdir_dofs = self.nd + pos[keep]
            self.fdir_vals = np.asarray(fluid.dir_vals, dtype=float)[keep]
        else:
            self.fdir_dofs = np.zeros(0, dtype=np.int64)
            self.fdir_vals = np.zeros(0)

    def _transfer(self, dt: float, d_n: np.ndarray):
        """T, c with y = [u_full; p] = T x + c (kinematic condensation)."""
        nvf = self.nvf
        nf = 4 * nvf
        rows = np.concatenate([
            self.if_fdofs,                      # u on interface from d
            self.int_fdofs,                     # interior u from x
            3 * nvf + np.arange(nvf)])          # p
        cols = np.concatenate([
            self.if_sdofs,
            self.nd + np.arange(self.nu),
            self.nd + self.nu + np.arange(nvf)])
        vals = np.concatenate([
            np.full(len(self.if_fdofs), 1.0 / dt),
            np.ones(self.nu + nvf)])
        T = sp.coo_matrix((vals, (rows, cols)), shape=(nf, self.nx)).tocsr()
        c = np.zeros(nf)
        c[self.if_fdofs] = -d_n[self.if_sdofs] / dt
        return T, c

    def step(self, d: np.ndarray, d_old: np.ndarray, fluid_state: FluidState,
             dt: float, active_tension=None, u_ale=None, valves=(),
             pressures=None):
        """Advance to t^{n+1}. Returns (d_new, FluidState, newton_iters).

        The fluid solver must already hold the t^{n+1} configuration."""
        A_f, b_f = self.fluid.assemble(fluid_state, dt, u_ale=u_ale,
                                       valves=valves, pressures=pressures)
        T, c = self._transfer(dt, d)
        QA = self.Q @ A_f
        QAT = (QA @ T).tocsr()
        rhs_f = self.Q @ b_f - QA @ c

        x = np.zeros(self.nx)
        x[:self.nd] = d                       # displacement predictor
        x[self.nd:self.nd + self.nu] = fluid_state.u.ravel()[self.int_fdofs]
        x[self.nd + self.nu:] = fluid_state.p

        dir_dofs = np.concatenate([self.solid.dirichlet_dofs, self.fdir_dofs])
        dir_vals = np.concatenate([self.solid.dirichlet_vals, self.fdir_vals])
        r0 = None
        for it in range(1, self.max_newton + 1):
            d_new = x[:self.nd]
            r_s, K_s = self.solid.dynamic_residual_tangent(
                d_new, d, d_old, dt, active_tension=active_tension)
            r = QAT @ x - rhs_f + self.Ps @ r_s
            J = QAT + self.Ps @ K_s @ self.Dd
            J, mr = apply_dirichlet(J, -r, dir_dofs,
                                    dir_vals - x[dir_dofs])
            free = np.ones(self.nx, dtype=bool)
            free[dir_dofs] = False
            rnorm = np.linalg.norm(r[free])
            if r0 is None:
                r0 = max(rnorm, 1e-30)
            dx = splu(J.tocsc()).solve(mr)
            x = x + dx
            if not np.all(np.isfinite(x)):
                raise SolverError("FSI Newton produced non-finite values")
            if (rnorm <= self.newton_tol * r0 or rnorm < 1e-9
                    or np.linalg.norm(dx) <= 1e-12 * max(1.0, np.linalg.norm(x))):
                break
        else:
            raise SolverError("FSI Newton did not converge "
                              f"(residual {rnorm:.3e})")

        d_new = x[:self.nd]
        u_full = np.zeros(3 * self.nvf)
        u_full[self.int_fdofs] = x[self.nd:self.nd + self.nu]
        # kinematic interface condition, exact by construction
        u_full[self.if_fdofs] = (d_new[self.if_sdofs] - d[self.if_sdofs]) / dt
        p = x[self.nd + self.nu:]
        return d_new, FluidState(u_full.reshape(self.nvf, 3), p), it


# -- phase detection --------------------------------------------------------

PHASE_EVENT_ORDER = ("mv_close", "av_open", "av_close", "mv_open")


def detect_phases(events, t_end=None):
    """Durations (T_IVC, T_ej, T_IVR, T_fil) from a valve event log.

    events: iterable of (label, time) with labels mv_open/mv_close/
    av_open/av_close. Within a beat the order must be
    mv_close < av_open < av_close < mv_open. Missing events give None for
    the affected phases; out-of-order events raise ValueError.
    """
    times = {}
    for label, t in events:
        if label not in PHASE_EVENT_ORDER:
            raise ValueError(f"unknown valve event '{label}'")
        times.setdefault(label, []).append(float(t))
    first = {k: v[0] for k, v in times.items()}
    present = [k for k in PHASE_EVENT_ORDER if k in first]
    seq = [first[k] for k in present]
    if any(b <= a for a, b in zip(seq, seq[1:])):
        raise ValueError(f"valve events out of order: {first}")

    def span(a, b):
        if a in first and b in first:
            return first[b] - first[a]
        return None

    t_ivc = span("mv_close", "av_open")
    t_ej = span("av_open", "av_close")
    t_ivr = span("av_close", "mv_open")
    if "mv_open" in times and len(times.get("mv_close", [])) > 1:
        t_fil = times["mv_close"][1] - first["mv_open"]
    elif "mv_open" in first and t_end is not None:
        t_fil = t_end - first["mv_open"]
    else:
        t_fil = None
    return {"T_IVC": t_ivc, "T_ej": t_ej, "T_IVR": t_ivr, "T_fil": t_fil}


# -- checkpointing -----------------------------------------------------------

CHECKPOINT_VERSION = 1


def config_hash(config: dict) -> str:
    """Stable hash of a (nested, JSON-serializable) configuration dict."""
    blob = json.dumps(config, sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, arrays: dict, cfg_hash: str):
    """Versioned binary checkpoint with the config hash embedded."""
    meta = {"__version__": np.array(CHECKPOINT_VERSION),
            "__config_hash__": np.array(cfg_hash)}
    np.savez(path, **meta, **arrays)


def load_checkpoint(path, expected_hash: str | None = None) -> dict:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        found = str(data["__config_hash__"])
        if expected_hash is not None and found != expected_hash:
            raise ValueError("checkpoint config hash mismatch: "
                             f"{found} != {expected_hash}")
        return {k: data[k] for k in data.files if not k.startswith("__")}
