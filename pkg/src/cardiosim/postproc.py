"""Trace files and the physiological indicator suite.

Traces are plain CSV, one row per time step; floats are written with
repr so that reading a trace back reproduces every value bitwise.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .circulation import MMHG_TO_PA
from .coupler import detect_phases


class TraceError(Exception):
    pass


# -- CSV round-trip -----------------------------------------------------------

def write_trace(path, rows: list[dict]):
    """CSV with repr-formatted floats (bitwise round-trip)."""
    if not rows:
        raise TraceError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        keys = list(rows[0])
        w.writerow(keys)
        for row in rows:
            w.writerow([repr(float(row[k])) for k in keys])


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        keys = next(r)
        return [{k: float(v) for k, v in zip(keys, row)} for row in r]


def write_events(path, events):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "t"])
        for label, t in events:
            w.writerow([label, repr(float(t))])


def read_events(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [(label, float(t)) for label, t in r]


# -- indicators ---------------------------------------------------------------

@dataclass
class IndicatorReport:
    edv_ml: float
    esv_ml: float
    sv_ml: float
    ef: float
    p_lv_max_mmhg: float
    q_av_max_ml_s: float
    t_ivc: float | None
    t_ej: float | None
    t_ivr: float | None
    t_fil: float | None
    lfs: float

    def __post_init__(self):
        # internal identities hold exactly by construction
        assert self.sv_ml == self.edv_ml - self.esv_ml
        assert self.ef == self.sv_ml / self.edv_ml

    def asdict(self) -> dict:
        return asdict(self)


def compute_indicators(trace: list[dict], events, t_hb: float | None = None,
                       last_beat_only: bool = True) -> IndicatorReport:
    """Table of physiological indicators from a trace and a valve event log.

    With last_beat_only (default) the analysis window is the final t_hb of
    the trace and only events inside it are used; otherwise the whole
    trace counts as one beat.
    """
    if not trace:
        raise TraceError("empty trace")
    t = np.array([row["t"] for row in trace])
    t_end = t[-1]
    if last_beat_only and t_hb is not None:
        window = t >= t_end - t_hb - 1e-12
        events = [(lab, te) for lab, te in events if te >= t_end - t_hb - 1e-12]
    else:
        window = np.ones(len(t), dtype=bool)
    if not np.any(window):
        raise TraceError("analysis window contains no samples")

    def col(name):
        return np.array([row[name] for row in trace])[window]

    v_lv = col("v_lv_ml")
    i_ed = int(np.argmax(v_lv))
    i_es = int(np.argmin(v_lv))
    edv, esv = float(v_lv[i_ed]), float(v_lv[i_es])
    length = col("apex_base_m")
    l_ed, l_es = float(length[i_ed]), float(length[i_es])
    phases = detect_phases(events, t_end=t_end)
    return IndicatorReport(
        edv_ml=edv, esv_ml=esv, sv_ml=edv - esv, ef=(edv - esv) / edv,
        p_lv_max_mmhg=float(np.nanmax(col("p_lv_pa"))) / MMHG_TO_PA,
        q_av_max_ml_s=float(np.max(col("q_av_ml_s"))),
        t_ivc=phases["T_IVC"], t_ej=phases["T_ej"],
        t_ivr=phases["T_IVR"], t_fil=phases["T_fil"],
        lfs=(l_ed - l_es) / l_ed if l_ed > 0 else 0.0)
