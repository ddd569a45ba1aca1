"""Closed-loop lumped-parameter circulation (open configuration).

The left atrium, left ventricle and the mitral/aortic valves are removed
from the loop: their role is played by the 3D model, which supplies the
aortic flow Q_AV and the pulmonary venous flow Q_VEN_PUL at the coupling
interface. Remaining compartments: systemic arteries/veins (RLC),
pulmonary arteries/veins (RLC), and an elastance right heart with diode
tricuspid/pulmonary valves.

Units: mmHg, mL, s. Conversion to SI happens at the 3D interface only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MMHG_TO_PA = 133.322
ML_TO_M3 = 1e-6

STATE_NAMES = (
    "p_ar_sys", "q_ar_sys", "p_ven_sys", "q_ven_sys",
    "v_ra", "v_rv", "p_ar_pul", "q_ar_pul", "p_ven_pul",
)


class ConfigurationError(Exception):
    pass


@dataclass
class RlcCompartment:
    R: float   # mmHg s/mL
    C: float   # mL/mmHg
    L: float   # mmHg s^2/mL
    p_init: float
    q_init: float

    def __post_init__(self):
        if min(self.R, self.C, self.L) <= 0:
            raise ConfigurationError("R, C, L must be positive")


@dataclass
class ElastanceChamber:
    """Time-varying elastance chamber: p = E(t) (V - V0)."""

    E_A: float   # active elastance amplitude, mmHg/mL
    E_B: float   # passive baseline, mmHg/mL
    t_C: float   # contraction onset, fraction of the heartbeat
    T_C: float   # contraction duration, s
    T_R: float   # relaxation duration, s
    V0: float    # resting volume, mL
    v_init: float = 0.0

    def activation(self, t: float, T_hb: float) -> float:
        """Raised-cosine activation: up-ramp over T_C then down over T_R."""
        if self.T_C + self.T_R > T_hb:
            raise ConfigurationError("T_C + T_R exceeds the heartbeat period")
        s = (t - self.t_C * T_hb) % T_hb
        if s <= self.T_C:
            return 0.5 * (1 - np.cos(np.pi * s / self.T_C))
        if s <= self.T_C + self.T_R:
            return 0.5 * (1 + np.cos(np.pi * (s - self.T_C) / self.T_R))
        return 0.0

    def elastance(self, t: float, T_hb: float, literal_amplitude: bool = False) -> float:
        amp = self.E_B if literal_amplitude else self.E_A
        return self.E_B + amp * self.activation(t, T_hb)

    def pressure(self, V: float, t: float, T_hb: float, p_ex: float = 0.0,
                 literal_amplitude: bool = False) -> float:
        return p_ex + self.elastance(t, T_hb, literal_amplitude) * (V - self.V0)


def diode_resistance(p1: float, p2: float, r_min: float, r_max: float) -> float:
    """Non-ideal diode valve: open (r_min) when p1 >= p2, else r_max."""
    return r_min if p1 >= p2 else r_max


@dataclass
class CirculationParams:
    ar_sys: RlcCompartment
    ven_sys: RlcCompartment
    ar_pul: RlcCompartment
    ven_pul: RlcCompartment
    right_atrium: ElastanceChamber
    right_ventricle: ElastanceChamber
    R_upstream_sys: float = 0.07
    R_min: float = 7.5e-3
    R_max: float = 7.5e4
    T_hb: float = 0.8
    p_ex: float = 0.0
    # audit flag: read the elastance amplitude literally as E_B
    literal_elastance_amplitude: bool = False
    # audit flag: literal systemic-venous equation (R_AR_SYS in denominator)
    literal_venous_resistance: bool = False


def table_defaults() -> CirculationParams:
    """Reference parameter set and initial conditions."""
    return CirculationParams(
        ar_sys=RlcCompartment(R=0.45, C=2.19, L=2.7e-3, p_init=80.0, q_init=66.5775),
        ven_sys=RlcCompartment(R=0.26, C=60.0, L=5e-4, p_init=30.9029, q_init=89.6295),
        ar_pul=RlcCompartment(R=0.05, C=10.0, L=5e-4, p_init=20.0, q_init=69.3166),
        ven_pul=RlcCompartment(R=0.025, C=38.4, L=2.083e-4, p_init=17.0, q_init=105.523),
        right_atrium=ElastanceChamber(E_A=0.06, E_B=0.07, t_C=0.8, T_C=0.17,
                                      T_R=0.17, V0=4.0, v_init=64.1702),
        right_ventricle=ElastanceChamber(E_A=0.55, E_B=0.05, t_C=0.0, T_C=0.34,
                                         T_R=0.15, V0=16.0, v_init=148.9384),
    )


@dataclass
class CirculationState:
    """ODE state c plus the externally supplied interface flows."""

    c: np.ndarray                      # 9 entries, STATE_NAMES order
    q_ven_pul: float = 0.0             # supplied by the 3D model, mL/s
    q_ven_pul_prev: float = 0.0        # previous value (inductor term)
    q_av: float = 0.0                  # supplied by the 3D model, mL/s

    @classmethod
    def from_params(cls, p: CirculationParams) -> "CirculationState":
        c = np.array([
            p.ar_sys.p_init, p.ar_sys.q_init,
            p.ven_sys.p_init, p.ven_sys.q_init,
            p.right_atrium.v_init, p.right_ventricle.v_init,
            p.ar_pul.p_init, p.ar_pul.q_init,
            p.ven_pul.p_init,
        ])
        return cls(c=c, q_ven_pul=p.ven_pul.q_init, q_ven_pul_prev=p.ven_pul.q_init)

    def asdict(self) -> dict:
        d = dict(zip(STATE_NAMES, self.c))
        d["q_ven_pul"] = self.q_ven_pul
        d["q_av"] = self.q_av
        return d


def algebraic_outputs(params: CirculationParams, c: np.ndarray, t: float,
                      q_ven_pul: float, dq_ven_pul_dt: float = 0.0) -> dict:
    """Chamber pressures, diode flows and the LA inlet pressure."""
    p = params
    p_ra = p.right_atrium.pressure(c[4], t, p.T_hb, p.p_ex,
                                   p.literal_elastance_amplitude)
    p_rv = p.right_ventricle.pressure(c[5], t, p.T_hb, p.p_ex,
                                      p.literal_elastance_amplitude)
    q_tv = (p_ra - p_rv) / diode_resistance(p_ra, p_rv, p.R_min, p.R_max)
    q_pv = (p_rv - c[6]) / diode_resistance(p_rv, c[6], p.R_min, p.R_max)
    p_la_in = c[8] - p.ven_pul.R * q_ven_pul - p.ven_pul.L * dq_ven_pul_dt
    return {"p_ra": p_ra, "p_rv": p_rv, "q_tv": q_tv, "q_pv": q_pv,
            "p_la_in": p_la_in}


def circulation_rhs(params: CirculationParams, c: np.ndarray, t: float,
                    q_av: float, q_ven_pul: float) -> np.ndarray:
    """dc/dt of the 9 differential unknowns."""
    p = params
    out = algebraic_outputs(p, c, t, q_ven_pul)
    p_ar_s, q_ar_s, p_ven_s, q_ven_s, _, _, p_ar_p, q_ar_p, p_ven_p = c
    r_ven_den = p.ar_sys.R if p.literal_venous_resistance else p.ven_sys.R
    return np.array([
        (q_av - q_ar_s) / p.ar_sys.C,
        (p.ar_sys.R / p.ar_sys.L) * (-q_ar_s - (p_ven_s - p_ar_s) / p.ar_sys.R),
        (q_ar_s - q_ven_s) / p.ven_sys.C,
        (p.ven_sys.R / p.ven_sys.L) * (-q_ven_s - (out["p_ra"] - p_ven_s) / r_ven_den),
        q_ven_s - out["q_tv"],
        out["q_tv"] - out["q_pv"],
        (out["q_pv"] - q_ar_p) / p.ar_pul.C,
        (p.ar_pul.R / p.ar_pul.L) * (-q_ar_p - (p_ven_p - p_ar_p) / p.ar_pul.R),
        (q_ar_p - q_ven_pul) / p.ven_pul.C,
    ])


def step_rk4(params: CirculationParams, state: CirculationState, t: float,
             dt: float) -> CirculationState:
    """Classical 4-stage explicit Runge-Kutta step with frozen external flows."""
    if dt <= 0:
        raise ValueError("dt must be positive")

    def f(ti, ci):
        return circulation_rhs(params, ci, ti, state.q_av, state.q_ven_pul)

    c = state.c
    k1 = f(t, c)
    k2 = f(t + dt / 2, c + dt / 2 * k1)
    k3 = f(t + dt / 2, c + dt / 2 * k2)
    k4 = f(t + dt, c + dt * k3)
    c_next = c + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(c_next)):
        raise FloatingPointError("circulation state became non-finite")
    return CirculationState(c=c_next, q_ven_pul=state.q_ven_pul,
                            q_ven_pul_prev=state.q_ven_pul_prev, q_av=state.q_av)


def coupling_conditions(params: CirculationParams, state: CirculationState,
                        flux_pv_si: float, flux_ao_si: float, dt: float) -> dict:
    """3D-0D interface quantities from lagged boundary fluxes.

    flux_pv_si, flux_ao_si: integrals of (u - u_ALE).n over the pulmonary
    vein inlet and aortic outlet [m^3/s].

    Returns p_in/p_out in Pa and the updated interface flows in mL/s.
    """
    q_ven_pul = -flux_pv_si / ML_TO_M3
    q_av = flux_ao_si / ML_TO_M3
    dq = (q_ven_pul - state.q_ven_pul) / dt
    out = algebraic_outputs(params, state.c, 0.0, q_ven_pul, dq)
    p_in = out["p_la_in"]
    p_out = state.c[0] + params.R_upstream_sys * q_av
    return {
        "p_in_pa": p_in * MMHG_TO_PA,
        "p_out_pa": p_out * MMHG_TO_PA,
        "p_in": p_in, "p_out": p_out,
        "q_ven_pul": q_ven_pul, "q_av": q_av,
    }


def total_blood_volume(params: CirculationParams, c: np.ndarray,
                       v_la_3d: float = 0.0, v_lv_3d: float = 0.0,
                       v_aa_3d: float = 0.0) -> float:
    """Total blood volume audit [mL]; zero-pressure volumes taken as zero."""
    p = params
    return (
        p.ven_pul.C * (c[8] - p.p_ex)
        + v_la_3d + v_lv_3d
        + v_aa_3d + p.ar_sys.C * (c[0] - p.p_ex)
        + p.ven_sys.C * (c[2] - p.p_ex)
        + c[4] + c[5]
        + p.ar_pul.C * (c[6] - p.p_ex)
    )
