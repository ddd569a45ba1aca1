"""Ventricle geometry, heart orchestration plumbing, indicators and CLI."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.integrate import quad

from cardiosim import cli
from cardiosim.coupler import SolverError, load_checkpoint, save_checkpoint
from cardiosim.fem.meshgen import ventricle_with_outflow
from cardiosim.heart import HeartSimulation, chamber_volume, default_valves
from cardiosim.postproc import (IndicatorReport, compute_indicators,
                                read_events, read_trace, write_events,
                                write_trace)

TINY = dict(n_rings=2, n_sectors=8, n_layers_lv=4, n_layers_shoulder=2,
            n_layers_tube=2)


@pytest.fixture(scope="module")
def ventricle():
    return ventricle_with_outflow(n_rings=3, n_sectors=12, n_layers_lv=7,
                                  n_layers_tube=3)


@pytest.fixture(scope="module")
def tiny_sim_cls():
    def make(**kw):
        f, s, im, geo = ventricle_with_outflow(**TINY)
        return HeartSimulation(f, s, im, geo, **kw)
    return make


class TestVentricleMesh:
    def test_interface_is_conforming(self, ventricle):
        fluid, solid, interface, _ = ventricle
        err = np.abs(fluid.vertices[interface[:, 0]]
                     - solid.vertices[interface[:, 1]]).max()
        assert err == 0.0

    def test_cavity_volume_matches_profile_integral(self, ventricle):
        # oracle: solid of revolution of the radius profile, shrunk by the
        # inscribed-polygon area factor of the 12-sector cross section
        fluid, _, _, geo = ventricle
        analytic, _ = quad(lambda z: np.pi * geo["profile"](z) ** 2,
                           geo["z_apex"], geo["z_base"])
        analytic *= 12 / (2 * np.pi) * np.sin(2 * np.pi / 12)
        meshed = chamber_volume(fluid, 1) / 1e6
        assert abs(meshed - analytic) / analytic < 0.02

    def test_tract_volume_matches_cone_plus_cylinder(self, ventricle):
        fluid, _, _, geo = ventricle
        rb, rt = geo["r_base"], geo["r_tube"]
        cone = (np.pi / 3) * geo["dz_shoulder"] * (rb**2 + rb * rt + rt**2)
        cyl = np.pi * rt**2 * geo["l_tube"]
        analytic = (cone + cyl) * 12 / (2 * np.pi) * np.sin(2 * np.pi / 12)
        meshed = chamber_volume(fluid, 2) / 1e6
        assert abs(meshed - analytic) / analytic < 0.02

    def test_boundary_tags_cover_everything(self, ventricle):
        fluid, solid, _, _ = ventricle
        assert set(np.unique(fluid.facet_tags)) == {1, 2, 3, 4, 5}
        assert set(np.unique(solid.facet_tags)) == {1, 2, 3, 4}

    def test_endocardium_areas_match(self, ventricle):
        fluid, solid, _, _ = ventricle
        fa, _ = fluid.facet_areas_normals()
        sa, _ = solid.facet_areas_normals()
        a_f = fa[fluid.facet_tags == 3].sum()
        a_s = sa[solid.facet_tags == 3].sum()
        assert a_f == pytest.approx(a_s, rel=1e-12)

    def test_chamber_tags_split_at_base_plane(self, ventricle):
        fluid, _, _, geo = ventricle
        cz = fluid.vertices[fluid.tets].mean(axis=1)[:, 2]
        assert np.all((cz < geo["z_base"]) == (fluid.cell_tags == 1))

    def test_invalid_arguments_raise(self):
        with pytest.raises(ValueError):
            ventricle_with_outflow(r_apex_frac=1.5)
        with pytest.raises(ValueError):
            ventricle_with_outflow(r_tube=0.05, r_base=0.03)


class TestLocate:
    def test_interior_points_reproduce_coordinates(self, ventricle):
        fluid = ventricle[0]
        rng = np.random.default_rng(3)
        cells = rng.integers(0, fluid.num_cells, 50)
        lam = rng.dirichlet(np.ones(4), 50)
        pts = np.einsum("pa,pax->px", lam, fluid.vertices[fluid.tets[cells]])
        found, bary = fluid.locate(pts, k_candidates=64)
        rec = np.einsum("pa,pax->px", bary, fluid.vertices[fluid.tets[found]])
        assert np.abs(rec - pts).max() < 1e-12
        assert bary.min() > -1e-9

    def test_outside_point_extrapolates(self, ventricle):
        fluid = ventricle[0]
        cells, bary = fluid.locate(np.array([[1.0, 1.0, 1.0]]))
        assert bary.sum() == pytest.approx(1.0, abs=1e-9)
        assert bary.min() < 0  # genuinely outside every candidate


class TestDefaultValves:
    def test_closed_mitral_blocks_inflow_shoulder(self, ventricle):
        _, _, _, geo = ventricle
        mv, _ = default_valves(geo)
        # a point on the cone surface, interpolated between its two rims
        zb, dz = geo["z_base"], geo["dz_shoulder"]
        r_in, r_out = geo["r_tube"], geo["r_base"] + 0.004
        lift_in, lift_out = dz + 0.0005, -0.002
        f = 0.4
        r = r_in + f * (r_out - r_in)
        z = zb + lift_in + f * (lift_out - lift_in)
        assert mv.penalty_weight(np.array([[r, 0.0, z]])).max() > 0

    def test_open_valves_leave_lumen_clear(self, ventricle):
        _, _, _, geo = ventricle
        mv, av = default_valves(geo)
        mv.force_open()
        av.force_open()
        for v in (mv, av):
            v.update_geometry(0.0)
        zs = np.linspace(geo["z_apex"], geo["z_top"], 40)
        axis = np.column_stack([np.zeros_like(zs), np.zeros_like(zs), zs])
        assert mv.penalty_weight(axis).max() == 0.0
        assert av.penalty_weight(axis).max() == 0.0

    def test_open_aortic_disk_clears_the_tube(self, ventricle):
        _, _, _, geo = ventricle
        _, av = default_valves(geo)
        av.force_open()
        av.update_geometry(0.0)
        rng = np.random.default_rng(1)
        r = geo["r_tube"] * np.sqrt(rng.uniform(0, 1, 200))
        th = rng.uniform(0, 2 * np.pi, 200)
        z = rng.uniform(geo["z_base"] + geo["dz_shoulder"], geo["z_top"], 200)
        pts = np.column_stack([r * np.cos(th), r * np.sin(th), z])
        assert av.penalty_weight(pts).max() == 0.0


class TestHeartStepping:
    def test_stage_order_logged(self, tiny_sim_cls):
        sim = tiny_sim_cls(t_end=1e-3)
        sim.run()
        assert sim.stage_log == [(1, 2, 3, 4, 5, 6)] * 5

    def test_quiet_start_fills_through_mitral(self, tiny_sim_cls):
        sim = tiny_sim_cls(t_end=4e-3, stim_time=10.0)
        v0 = sim.trace[0]["v_lv_ml"]
        sim.run()
        r = sim.trace[-1]
        assert r["q_mv_ml_s"] > 0          # venous pressure drives inflow
        assert r["v_lv_ml"] > v0
        assert abs(r["q_av_ml_s"]) < 0.05 * r["q_mv_ml_s"]  # AV closed

    def test_total_volume_conserved_through_filling(self, tiny_sim_cls):
        sim = tiny_sim_cls(t_end=4e-3, stim_time=10.0)
        sim.run()
        v = [row["v_tot_ml"] for row in sim.trace]
        assert abs(v[-1] - v[0]) / v[0] < 1e-4

    def test_deterministic(self, tiny_sim_cls):
        def run():
            sim = tiny_sim_cls(t_end=2e-3)
            sim.run()
            return sim.d.copy(), sim.fluid_state.p.copy()
        d1, p1 = run()
        d2, p2 = run()
        assert np.array_equal(d1, d2) and np.array_equal(p1, p2)

    def test_checkpoint_restart_is_bitwise(self, tiny_sim_cls, tmp_path):
        sim_a = tiny_sim_cls(t_end=2e-3)
        for _ in range(5):
            sim_a.advance()

        sim_b = tiny_sim_cls(t_end=2e-3)
        for _ in range(2):
            sim_b.advance()
        path = tmp_path / "ck.npz"
        save_checkpoint(path, sim_b.state_arrays(), "h")
        sim_c = tiny_sim_cls(t_end=2e-3)
        sim_c.restore(load_checkpoint(path, expected_hash="h"))
        for _ in range(3):
            sim_c.advance()
        assert np.array_equal(sim_a.d, sim_c.d)
        assert np.array_equal(sim_a.fluid_state.u, sim_c.fluid_state.u)
        assert np.array_equal(sim_a.fluid_state.p, sim_c.fluid_state.p)
        assert sim_a.circ.c.tolist() == sim_c.circ.c.tolist()


def synthetic_trace(t_hb=0.8, n=200):
    t = np.linspace(0, t_hb, n)
    v = 100 - 40 * np.sin(np.pi * t / t_hb) ** 2
    rows = [{"t": ti, "v_lv_ml": vi, "apex_base_m": 0.08,
             "p_lv_pa": 1000.0 * (1 + np.sin(2 * np.pi * ti)),
             "q_av_ml_s": 300.0 * max(np.sin(2 * np.pi * ti / t_hb), 0.0)}
            for ti, vi in zip(t, v)]
    events = [("mv_close", 0.089), ("av_open", 0.1532),
              ("av_close", 0.45), ("mv_open", 0.52)]
    return rows, events


class TestIndicators:
    def test_identities_hold_exactly(self):
        rows, events = synthetic_trace()
        rep = compute_indicators(rows, events, t_hb=0.8)
        assert rep.sv_ml == rep.edv_ml - rep.esv_ml
        assert rep.ef == rep.sv_ml / rep.edv_ml
        assert rep.edv_ml == pytest.approx(100.0, abs=0.01)
        assert rep.esv_ml == pytest.approx(60.0, abs=0.01)

    def test_reference_arithmetic(self):
        # EDV 139.1 / ESV 58.6 -> SV 80.5, EF 57.9 %
        sv = 139.1 - 58.6
        assert sv == pytest.approx(80.5)
        assert sv / 139.1 == pytest.approx(0.579, abs=5e-4)
        # LFS from lengths 100 mm -> 82.2 mm
        assert (100.0 - 82.2) / 100.0 == pytest.approx(0.178)

    def test_phase_durations_from_events(self):
        rows, events = synthetic_trace()
        rep = compute_indicators(rows, events, t_hb=0.8)
        assert rep.t_ivc == pytest.approx(0.1532 - 0.089, abs=1e-12)
        assert rep.t_ej == pytest.approx(0.45 - 0.1532, abs=1e-12)
        assert rep.t_ivr == pytest.approx(0.52 - 0.45, abs=1e-12)

    def test_last_beat_window(self):
        rows, events = synthetic_trace()
        shifted = [dict(r, t=r["t"] + 0.8) for r in rows]
        # decoy earlier beat, dropping its endpoint row at exactly t = 0.8
        first = [dict(r, v_lv_ml=500.0) for r in rows[:-1]]
        rep = compute_indicators(first + shifted,
                                 [(l, t + 0.8) for l, t in events], t_hb=0.8)
        assert rep.edv_ml == pytest.approx(100.0, abs=0.01)

    def test_inconsistent_report_rejected(self):
        with pytest.raises(AssertionError):
            IndicatorReport(100, 50, 49, 0.5, 0, 0, None, None, None, None, 0)


class TestTraceIO:
    def test_bitwise_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = [{"t": float(x), "v_lv_ml": float(y), "apex_base_m": float(z),
                 "p_lv_pa": float(p), "q_av_ml_s": float(q)}
                for x, y, z, p, q in rng.standard_normal((20, 5))]
        path = tmp_path / "trace.csv"
        write_trace(path, rows)
        back = read_trace(path)
        assert back == rows

    def test_events_roundtrip(self, tmp_path):
        events = [("mv_close", 0.1), ("av_open", 0.15 + 1e-17)]
        path = tmp_path / "events.csv"
        write_events(path, events)
        assert read_events(path) == events

    def test_indicators_recompute_bitwise(self, tmp_path):
        rows, events = synthetic_trace()
        write_trace(tmp_path / "t.csv", rows)
        write_events(tmp_path / "e.csv", events)
        a = compute_indicators(rows, events, t_hb=0.8)
        b = compute_indicators(read_trace(tmp_path / "t.csv"),
                               read_events(tmp_path / "e.csv"), t_hb=0.8)
        assert a == b


CONFIG = """
[simulation]
dt = 2e-4
t_end = {t_end}
t_hb = 0.8
stim_time = 10.0

[geometry]
kind = "idealized_ventricle"
n_rings = 2
n_sectors = 8
n_layers_lv = 4
n_layers_shoulder = 2
n_layers_tube = 2

[output]
directory = "{outdir}"
vtk_every = {vtk_every}
checkpoint_every = 0
"""


class TestCli:
    def write_config(self, tmp_path, **kw):
        kw.setdefault("t_end", 6e-4)
        kw.setdefault("outdir", str(tmp_path / "out"))
        kw.setdefault("vtk_every", 0)
        path = tmp_path / "config.toml"
        path.write_text(CONFIG.format(**kw))
        return path

    def test_simulate_writes_trace_and_indicators_run(self, tmp_path):
        cfg = self.write_config(tmp_path, vtk_every=2)
        assert cli.main(["simulate", str(cfg)]) == 0
        outdir = tmp_path / "out"
        assert (outdir / "trace.csv").exists()
        assert (outdir / "events.csv").exists()
        assert (outdir / "fluid_000002.vtk").exists()
        assert (outdir / "solid_000002.vtk").exists()
        assert json.loads((outdir / "run.json").read_text())["stage_order_ok"]
        assert cli.main(["postprocess", str(outdir)]) == 0
        assert (outdir / "derived.csv").exists()
        # no valve events in a 3-step quiet run: phases undefined, still ok
        assert cli.main(["indicators", str(outdir)]) == 0
        report = json.loads((outdir / "indicators.json").read_text())
        assert report["sv_ml"] == report["edv_ml"] - report["esv_ml"]

    def test_missing_config_exits_1(self, tmp_path, capsys):
        assert cli.main(["simulate", str(tmp_path / "nope.toml")]) == 1

    def test_bad_key_exits_1(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[geometry]\nbogus = 1\n")
        assert cli.main(["simulate", str(path)]) == 1

    def test_invalid_toml_exits_1(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[geometry\n")
        assert cli.main(["simulate", str(path)]) == 1

    def test_negative_dt_exits_1(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[simulation]\ndt = -1.0\n")
        assert cli.main(["simulate", str(path)]) == 1

    def test_solver_failure_exits_2(self, tmp_path, monkeypatch):
        cfg = self.write_config(tmp_path)
        from cardiosim.heart import HeartSimulation

        def boom(self, callback=None):
            raise SolverError("synthetic failure")

        monkeypatch.setattr(HeartSimulation, "run", boom)
        assert cli.main(["simulate", str(cfg)]) == 2

    def test_console_entry_point(self, tmp_path):
        out = subprocess.run([sys.executable, "-m", "cardiosim.cli",
                              "simulate", "missing.toml"],
                             capture_output=True, text=True,
                             cwd=tmp_path,
                             env=dict(os.environ, CARDIOSIM_THREADS="1"))
        assert out.returncode == 1
        assert "configuration error" in out.stderr
