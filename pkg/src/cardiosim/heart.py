"""Closed-loop heartbeat on the idealized ventricle.

One HeartSimulation owns all submodels and advances them with the
staggered scheme, in this fixed stage order per step:

1. electrophysiology substeps on the myocardium with lagged geometry,
2. fiber stretch regularization and activation dynamics,
3. harmonic mesh lifting and ALE velocity,
4. immersed valve switching and geometry update,
5. interface fluxes and the 0D circulation update (RK4, frozen fluxes),
6. monolithic FSI solve with time-step halving on failure.

The instrumentation log records the stages actually executed each step so
the ordering is auditable.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .activation import ActivationModel, ActivationParams, StretchRegularizer, sarcomere_length
from .ale import AleLifting, ale_velocity
from .circulation import (ML_TO_M3, MMHG_TO_PA, CirculationParams,
                          CirculationState, step_rk4, table_defaults,
                          total_blood_volume)
from .coupler import FsiProblem, SimulationClock
from .ep import IonicModel, MonodomainStepper, gaussian_stimulus
from .fem.spaces import FunctionSpace
from .fibers import generate_fibers
from .fluid import (ControlVolume, FluidParams, FluidSolver, FluidState,
                    SolverError, boundary_flux, control_volume_pressure)
from .solid import GuccioneParams, NeoHookeanParams, RobinSupport, SolidModel
from .valves import ValveParams, cone_valve, disk_valve

ML = 1e6  # m^3 -> mL


def chamber_volume(mesh, chamber_tag: int) -> float:
    """Volume of the cells carrying the given tag, in mL."""
    mask = mesh.cell_tags == chamber_tag
    return float(mesh.cell_volumes()[mask].sum() * ML)


def default_valves(geo, params: ValveParams | None = None):
    """Mitral cone on the inflow shoulder and aortic disk in the tract.

    The mitral surface hugs the conical inflow from inside: its inner rim
    sits on the tube wall just above the shoulder, its outer rim pokes
    through the endocardium just below the base plane, so the closed
    configuration seals the inflow while leaving the central outflow
    column clear. Opening parks both surfaces outside the lumen.
    """
    p = params or ValveParams()
    zb, dz = geo["z_base"], geo["dz_shoulder"]
    rt, rb = geo["r_tube"], geo["r_base"]
    mv = cone_valve(center=(0.0, 0.0, zb), normal=(0.0, 0.0, 1.0),
                    r_inner=rt, r_outer=rb + 0.004,
                    lift_inner=dz + 0.0005, lift_outer=-0.002,
                    open_radial=1.2 * rb, open_lift=dz + 0.004,
                    n_rings=4, n_sectors=24, params=p, name="mv",
                    allow_outside=True)
    av = disk_valve(center=(0.0, 0.0, zb + dz + 0.006),
                    normal=(0.0, 0.0, 1.0), radius=1.25 * rt,
                    n_rings=4, n_sectors=16, params=p, name="av",
                    allow_outside=True)
    return mv, av


class HeartSimulation:
    """Electromechanics, valves, 0D circulation and FSI on one ventricle."""

    def __init__(self, fluid_mesh, solid_mesh, interface_map, geo,
                 dt: float = 2e-4, n_ep: int = 2, t_end: float = 0.8,
                 t_hb: float = 0.8, stim_time: float = 0.08,
                 stim_duration: float = 3e-3, stim_sigma: float = 6e-3,
                 t_ramp: float = 0.08,
                 sigma=(2.0e-4, 1.05e-4, 0.55e-4),
                 fluid_params: FluidParams | None = None,
                 circ_params: CirculationParams | None = None,
                 valve_params: ValveParams | None = None,
                 activation_params: ActivationParams | None = None,
                 guccione: GuccioneParams | None = None,
                 neo: NeoHookeanParams | None = None,
                 robin: RobinSupport | None = None,
                 newton_tol: float = 1e-6, max_retries: int = 3):
        self.geo = geo
        self.clock = SimulationClock(dt=dt, n_ep=n_ep, t_end=t_end, t_hb=t_hb)
        self.max_retries = max_retries
        self.ref_fluid = fluid_mesh

        # myocardium: fibers, passive/active mechanics
        f0, s0, n0, _ = generate_fibers(solid_mesh, endo_tags=3, epi_tags=4,
                                        axis=(0.0, 0.0, 1.0))
        self.solid = SolidModel(
            solid_mesh, f0, s0, n0, c_buf=1.0,
            guccione=guccione, neo=neo,
            dirichlet=[((1, 2), (0, 1, 2), 0.0)],
            robin=robin or RobinSupport(tags=(4,)))

        # electrophysiology on a quadratic space over the same mesh
        self.ep_space = FunctionSpace(solid_mesh, degree=2)
        self.ep = MonodomainStepper(self.ep_space, f0, s0, n0, sigma,
                                    ionic=IonicModel(), dt=dt / n_ep)
        apex = (0.0, 0.0, geo["z_apex"])
        pulse = gaussian_stimulus(self.ep_space, [apex], sigma=stim_sigma,
                                  duration=stim_duration, start=0.0)
        self.stim_time, self.stim_duration = stim_time, stim_duration
        self.t_ramp = t_ramp

        def i_app(t):
            return pulse((t - stim_time) % t_hb)

        self.i_app = i_app
        self.ep_state = self.ep.ionic.resting_state(self.ep_space.num_nodes)

        # activation from regularized fiber stretch; the default rates give
        # a twitch that peaks near 250 ms and relaxes within 600 ms, so one
        # 0.8 s beat fits systole and refilling
        self.activation = ActivationModel(
            activation_params
            or ActivationParams(perm=2.4e-4, k_on=60.0, k_off=30.0))
        self.f0 = f0
        self.reg = StretchRegularizer(FunctionSpace(solid_mesh, degree=1),
                                      self.activation.p.delta_sl)
        self.s_act = np.zeros(solid_mesh.num_cells)
        self.sl_prev = np.full(solid_mesh.num_cells, self.activation.p.sl_0)

        # fluid, lifting, interface
        self.fluid = FluidSolver(fluid_mesh, fluid_params or FluidParams(),
                                 dirichlet=[((4, 5), 0.0)],
                                 neumann_tags=(1, 2))
        self.ale = AleLifting(fluid_mesh, interface_tags=(3,),
                              fixed_tags=(1, 2, 4, 5))
        self.fsi = FsiProblem(self.solid, self.fluid, interface_map,
                              newton_tol=newton_tol)

        # valves, control volumes, circulation
        self.mv, self.av = default_valves(geo, valve_params)
        self.mv.force_open()
        self._valve_locs = {
            v.name: fluid_mesh.locate(v.x_closed) for v in (self.mv, self.av)}
        zc = 0.5 * (geo["z_apex"] + geo["z_base"])
        self.cv_lv = ControlVolume((0.0, 0.0, zc), 0.45 * geo["r_base"], "lv")
        z_aa = geo["z_base"] + geo["dz_shoulder"] + 0.75 * geo["l_tube"]
        self.cv_aa = ControlVolume((0.0, 0.0, z_aa), 0.6 * geo["r_tube"], "aa")
        self.circ_params = circ_params or table_defaults()
        self.circ = CirculationState.from_params(self.circ_params)

        # landmarks for the apico-basal length trace
        verts = fluid_mesh.vertices
        self._apex_v = int(np.argmin(np.linalg.norm(
            verts - [0.0, 0.0, geo["z_apex"]], axis=1)))
        self._base_v = int(np.argmin(np.linalg.norm(
            verts - [0.0, 0.0, geo["z_base"]], axis=1)))

        # evolving state
        nvf, ndof = fluid_mesh.num_vertices, self.solid.ndof
        self.d = np.zeros(ndof)
        self.d_old = np.zeros(ndof)
        self.fluid_state = FluidState.zeros(fluid_mesh)
        self.d_ale = np.zeros(3 * nvf)
        self.p_in_pa, self.p_out_pa = self._interface_pressures()
        self.events: list[tuple[str, float]] = []
        self.trace: list[dict] = []
        self.stage_log: list[tuple[int, ...]] = []
        self._record(newton_iters=0)

    # -- helpers -----------------------------------------------------------
    def _interface_disp(self, d):
        disp = np.zeros((self.ref_fluid.num_vertices, 3))
        disp[self.fsi.if_fluid] = d.reshape(-1, 3)[self.fsi.if_solid]
        return disp.ravel()

    def _valve_ale(self, valve):
        cells, bary = self._valve_locs[valve.name]
        nodal = self.d_ale.reshape(-1, 3)
        return np.einsum("pa,pai->pi", bary, nodal[self.ref_fluid.tets[cells]])

    def _update_valve(self, valve, t, jump):
        t_open, t_close = valve.t_open, valve.t_close
        valve.update_state(t, jump)
        if valve.t_open != t_open:
            self.events.append((f"{valve.name}_open", valve.t_open))
        if valve.t_close != t_close:
            self.events.append((f"{valve.name}_close", valve.t_close))

    def _interface_pressures(self):
        """Neumann data from the 0D state: the venous pulmonary compartment
        pressure at the inflow, the systemic arterial pressure plus the
        upstream aortic resistance drop at the outflow. [Pa]

        The inflow pressure is ramped over the first ``t_ramp`` seconds so
        the quiescent initial state fills gently instead of taking a
        waterhammer hit that flips the mitral latch prematurely."""
        ramp = min(self.clock.t / self.t_ramp, 1.0) if self.t_ramp > 0 else 1.0
        p_in = ramp * self.circ.c[8]
        p_out = self.circ.c[0] + self.circ_params.R_upstream_sys * self.circ.q_av
        return p_in * MMHG_TO_PA, p_out * MMHG_TO_PA

    def _fsi_with_retry(self, d, d_old, fl, dt, tension, u_ale, pressures,
                        depth=0):
        valves = (self.mv, self.av)
        try:
            return self.fsi.step(d, d_old, fl, dt, active_tension=tension,
                                 u_ale=u_ale, valves=valves,
                                 pressures=pressures)
        except SolverError:
            if depth >= self.max_retries:
                raise
            half = 0.5 * dt
            d1, fl1, it1 = self._fsi_with_retry(
                d, 0.5 * (d + d_old), fl, half, tension, u_ale, pressures,
                depth + 1)
            d2, fl2, it2 = self._fsi_with_retry(
                d1, d, fl1, half, tension, u_ale, pressures, depth + 1)
            return d2, fl2, it1 + it2

    def _volumes(self):
        mesh = self.fluid.mesh
        return chamber_volume(mesh, 1), chamber_volume(mesh, 2)

    def _record(self, newton_iters):
        mesh = self.fluid.mesh
        v_lv, v_aa = self._volumes()
        try:
            p_lv = control_volume_pressure(mesh, self.fluid_state.p, self.cv_lv)
            p_aa = control_volume_pressure(mesh, self.fluid_state.p, self.cv_aa)
        except ValueError:
            p_lv = p_aa = np.nan
        t = self.clock.t
        xa = mesh.vertices[self._apex_v]
        xb = mesh.vertices[self._base_v]
        row = {
            "step": self.clock.step_index, "t": t,
            "v_lv_ml": v_lv, "v_aa_ml": v_aa,
            "p_lv_pa": p_lv, "p_aa_pa": p_aa,
            "p_in_pa": self.p_in_pa, "p_out_pa": self.p_out_pa,
            "q_mv_ml_s": self.circ.q_ven_pul, "q_av_ml_s": self.circ.q_av,
            "c_mv": self.mv.coefficient(t), "c_av": self.av.coefficient(t),
            "apex_base_m": float(np.linalg.norm(xb - xa)),
            "v_tot_ml": total_blood_volume(self.circ_params, self.circ.c,
                                           0.0, v_lv, v_aa),
            "newton_iters": newton_iters,
        }
        row.update(self.circ.asdict())
        self.trace.append(row)

    # -- one step of the staggered scheme -----------------------------------
    def advance(self):
        clock = self.clock
        dt, t = clock.dt, clock.t
        t_new = t + dt
        stages = []

        # 1. electrophysiology with geometry lagged at t^n
        F = self.solid.deformation_gradient(self.d)
        J = np.linalg.det(F)
        self.ep.update_geometry(F, J)
        for k in range(clock.n_ep):
            self.ep_state = self.ep.step(self.ep_state, t + k * clock.dt_ep,
                                         self.i_app)
        stages.append(1)

        # 2. activation from regularized stretch at t^n
        sl_cell = self.reg.cell_average(
            self.reg.smooth(sarcomere_length(F, self.f0,
                                             self.activation.p.sl_0)))
        dsl = (sl_cell - self.sl_prev) / dt
        nv_s = self.solid.mesh.num_vertices
        ca_cell = self.ep_state["ca"][:nv_s][self.solid.mesh.tets].mean(axis=1)
        self.s_act = self.activation.step(self.s_act, ca_cell, sl_cell, dsl, dt)
        tension = self.activation.tension(self.s_act)
        self.sl_prev = sl_cell
        stages.append(2)

        # 3. lifting of the interface displacement, ALE velocity
        d_ale_new = self.ale.harmonic(self._interface_disp(self.d))
        u_ale = ale_velocity(d_ale_new, self.d_ale, dt).reshape(-1, 3)
        self.d_ale = d_ale_new
        self.fluid.update_mesh(self.ref_fluid.displaced(d_ale_new.reshape(-1, 3)))
        stages.append(3)

        # 4. valve switching on lagged pressure jumps, then geometry
        # (the mitral jump uses the unramped venous pressure so the
        # start-up ramp cannot flip the latch while the cavity is passive)
        mesh = self.fluid.mesh
        p_lv = control_volume_pressure(mesh, self.fluid_state.p, self.cv_lv)
        p_aa = control_volume_pressure(mesh, self.fluid_state.p, self.cv_aa)
        p_ven = self.circ.c[8] * MMHG_TO_PA
        self._update_valve(self.mv, t_new, p_ven - p_lv)
        self._update_valve(self.av, t_new, p_lv - p_aa)
        for v in (self.mv, self.av):
            v.update_geometry(t_new, self._valve_ale(v))
        stages.append(4)

        # 5. interface fluxes, then the 0D loop with frozen flows
        w = self.fluid_state.u - u_ale
        q_ven_pul = -boundary_flux(mesh, w, 1) / ML_TO_M3
        q_av = boundary_flux(mesh, w, 2) / ML_TO_M3
        self.circ = replace(self.circ, q_ven_pul=q_ven_pul,
                            q_ven_pul_prev=self.circ.q_ven_pul, q_av=q_av)
        self.circ = step_rk4(self.circ_params, self.circ, t, dt)
        self.p_in_pa, self.p_out_pa = self._interface_pressures()
        stages.append(5)

        # 6. monolithic FSI
        d_new, self.fluid_state, iters = self._fsi_with_retry(
            self.d, self.d_old, self.fluid_state, dt, tension, u_ale,
            {1: self.p_in_pa, 2: self.p_out_pa})
        self.d_old, self.d = self.d, d_new
        stages.append(6)

        clock.advance()
        self.stage_log.append(tuple(stages))
        self._record(newton_iters=iters)

    def run(self, callback=None):
        while not self.clock.done():
            self.advance()
            if callback is not None:
                callback(self)

    # -- checkpointing -------------------------------------------------------
    def state_arrays(self) -> dict:
        return {
            "t": np.array([self.clock.t]),
            "step_index": np.array([self.clock.step_index]),
            "d": self.d, "d_old": self.d_old, "d_ale": self.d_ale,
            "u": self.fluid_state.u, "p": self.fluid_state.p,
            "ep_v": self.ep_state["v"], "ep_h": self.ep_state["h"],
            "ep_w": self.ep_state["w"], "ep_ca": self.ep_state["ca"],
            "s_act": self.s_act, "sl_prev": self.sl_prev,
            "circ_c": self.circ.c,
            "circ_q": np.array([self.circ.q_ven_pul,
                                self.circ.q_ven_pul_prev, self.circ.q_av]),
            "valve_times": np.array([self.mv.t_open, self.mv.t_close,
                                     self.av.t_open, self.av.t_close]),
            "p_bc": np.array([self.p_in_pa, self.p_out_pa]),
        }

    def restore(self, arrays: dict):
        self.clock.step_index = int(arrays["step_index"][0])
        self.clock.t = float(arrays["t"][0])
        self.d = arrays["d"]
        self.d_old = arrays["d_old"]
        self.d_ale = arrays["d_ale"]
        self.fluid_state = FluidState(arrays["u"], arrays["p"])
        self.ep_state = {"v": arrays["ep_v"], "h": arrays["ep_h"],
                         "w": arrays["ep_w"], "ca": arrays["ep_ca"]}
        self.s_act = arrays["s_act"]
        self.sl_prev = arrays["sl_prev"]
        self.circ = CirculationState(
            c=arrays["circ_c"], q_ven_pul=float(arrays["circ_q"][0]),
            q_ven_pul_prev=float(arrays["circ_q"][1]),
            q_av=float(arrays["circ_q"][2]))
        self.mv.t_open, self.mv.t_close = arrays["valve_times"][:2]
        self.av.t_open, self.av.t_close = arrays["valve_times"][2:]
        self.p_in_pa, self.p_out_pa = arrays["p_bc"]
        self.fluid.update_mesh(self.ref_fluid.displaced(self.d_ale.reshape(-1, 3)))
        for v in (self.mv, self.av):
            v.update_geometry(self.clock.t, self._valve_ale(v))
