"""Batch command line interface.

Subcommands:
  simulate <config.toml>   run a simulation, emit traces/VTK/checkpoints
  postprocess <trace-dir>  derived per-step quantities and phase durations
  indicators <trace-dir>   physiological indicator report (JSON)

Exit codes: 0 success, 1 configuration error, 2 solver failure.

The environment variable CARDIOSIM_THREADS caps the BLAS/LAPACK thread
count (set it to 1 for bitwise-deterministic reductions); it must be
read before the first numpy import in a fresh interpreter to take full
effect, which the console entry point guarantees.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_threads = os.environ.get("CARDIOSIM_THREADS")
if _threads:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, _threads)

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class ConfigError(Exception):
    pass


EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


# -- configuration -------------------------------------------------------------

_GEOMETRY_KEYS = ("r_base", "z_base", "thickness", "r_tube", "l_tube",
                  "dz_shoulder", "r_apex_frac", "n_rings", "n_wall",
                  "n_sectors", "n_layers_lv", "n_layers_shoulder",
                  "n_layers_tube")
_SIM_KEYS = ("dt", "t_end", "t_hb", "n_ep", "stim_time", "stim_duration",
             "stim_sigma", "newton_tol", "max_retries")


def load_config(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    sim = cfg.get("simulation", {})
    for key in ("dt", "t_end", "t_hb"):
        if key in sim and not (isinstance(sim[key], (int, float))
                               and sim[key] > 0):
            raise ConfigError(f"simulation.{key} must be positive")
    geo = cfg.get("geometry", {})
    kind = geo.get("kind", "idealized_ventricle")
    if kind == "mesh_files":
        for key in ("fluid_mesh", "solid_mesh"):
            p = geo.get(key)
            if not p or not os.path.exists(p):
                raise ConfigError(f"geometry.{key} missing or not found")
    elif kind != "idealized_ventricle":
        raise ConfigError(f"unknown geometry.kind: {kind!r}")
    for key in geo:
        if key not in _GEOMETRY_KEYS + ("kind", "fluid_mesh", "solid_mesh"):
            raise ConfigError(f"unknown geometry key: {key!r}")
    for key in sim:
        if key not in _SIM_KEYS + ("restart",):
            raise ConfigError(f"unknown simulation key: {key!r}")
    restart = sim.get("restart")
    if restart and not os.path.exists(restart):
        raise ConfigError(f"restart checkpoint not found: {restart}")


def _mesh_file_geometry(geo_cfg: dict):
    """Fluid/solid meshes from Gmsh files following the ventricle tagging
    convention; the interface map comes from exact coordinate matches."""
    import numpy as np

    from .fem.io import read_gmsh_v2

    fluid = read_gmsh_v2(geo_cfg.pop("fluid_mesh"))
    solid = read_gmsh_v2(geo_cfg.pop("solid_mesh"))
    scale = max(np.abs(fluid.vertices).max(), 1.0)
    key = lambda v: np.round(v / (1e-9 * scale)).astype(np.int64)
    lookup = {tuple(k): i for i, k in enumerate(key(fluid.vertices))}
    pairs = [(lookup[tuple(k)], j) for j, k in enumerate(key(solid.vertices))
             if tuple(k) in lookup]
    if not pairs:
        raise ConfigError("fluid and solid meshes share no interface vertices")
    geo = {k: geo_cfg.pop(k) for k in list(geo_cfg) if k in _GEOMETRY_KEYS}
    required = ("r_base", "z_base", "r_tube", "l_tube", "dz_shoulder")
    missing = [k for k in required if k not in geo]
    if missing:
        raise ConfigError(f"mesh_files geometry needs keys: {missing}")
    zb = geo["z_base"]
    geo.setdefault("z_apex", float(fluid.vertices[:, 2].min()))
    geo["z_top"] = zb + geo["dz_shoulder"] + geo["l_tube"]
    return fluid, solid, np.array(pairs, dtype=np.int64), geo


def build_simulation(cfg: dict):
    from dataclasses import replace

    from .fem.meshgen import ventricle_with_outflow
    from .fluid import FluidParams
    from .heart import HeartSimulation
    from .valves import ValveParams

    geo_cfg = dict(cfg.get("geometry", {}))
    kind = geo_cfg.pop("kind", "idealized_ventricle")
    try:
        if kind == "mesh_files":
            fluid, solid, interface, geo = _mesh_file_geometry(geo_cfg)
        else:
            fluid, solid, interface, geo = ventricle_with_outflow(**geo_cfg)

        kwargs = {k: v for k, v in cfg.get("simulation", {}).items()
                  if k in _SIM_KEYS}
        if "fluid" in cfg:
            kwargs["fluid_params"] = FluidParams(**cfg["fluid"])
        if "valves" in cfg:
            kwargs["valve_params"] = ValveParams(**cfg["valves"])
        if "circulation" in cfg:
            from .circulation import table_defaults
            kwargs["circ_params"] = replace(table_defaults(),
                                            **cfg["circulation"])
        return HeartSimulation(fluid, solid, interface, geo, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# -- subcommands ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .coupler import config_hash, load_checkpoint, save_checkpoint
    from .fem.io import write_vtk
    from .fluid import SolverError
    from .postproc import write_events, write_trace

    cfg = load_config(args.config)
    out_cfg = cfg.get("output", {})
    outdir = out_cfg.get("directory", "output")
    os.makedirs(outdir, exist_ok=True)
    vtk_every = int(out_cfg.get("vtk_every", 0))
    ckpt_every = int(out_cfg.get("checkpoint_every", 0))
    # the hash identifies the physics setup; where we resumed from is not
    # part of it, so a restart config matches its parent's checkpoints
    hashable = {k: (dict(v) if isinstance(v, dict) else v)
                for k, v in cfg.items()}
    hashable.get("simulation", {}).pop("restart", None)
    chash = config_hash(hashable)

    sim = build_simulation(cfg)
    restart = cfg.get("simulation", {}).get("restart")
    if restart:
        sim.restore(load_checkpoint(restart, expected_hash=chash))

    def emit_vtk(sim):
        step = sim.clock.step_index
        mesh = sim.fluid.mesh
        write_vtk(os.path.join(outdir, f"fluid_{step:06d}.vtk"), mesh,
                  point_data={"u": sim.fluid_state.u, "p": sim.fluid_state.p})
        nv = sim.solid.mesh.num_vertices
        write_vtk(os.path.join(outdir, f"solid_{step:06d}.vtk"),
                  sim.solid.mesh.displaced(sim.d.reshape(-1, 3)),
                  point_data={"v": sim.ep_state["v"][:nv]})

    def callback(sim):
        step = sim.clock.step_index
        if vtk_every and step % vtk_every == 0:
            emit_vtk(sim)
        if ckpt_every and step % ckpt_every == 0:
            save_checkpoint(os.path.join(outdir, f"checkpoint_{step:06d}.npz"),
                            sim.state_arrays(), chash)

    try:
        sim.run(callback)
    except (SolverError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        write_trace(os.path.join(outdir, "trace.csv"), sim.trace)
        write_events(os.path.join(outdir, "events.csv"), sim.events)
        return EXIT_SOLVER
    write_trace(os.path.join(outdir, "trace.csv"), sim.trace)
    write_events(os.path.join(outdir, "events.csv"), sim.events)
    with open(os.path.join(outdir, "run.json"), "w") as fh:
        json.dump({"config_hash": chash, "t_hb": sim.clock.t_hb,
                   "steps": sim.clock.step_index,
                   "stage_order_ok": all(s == (1, 2, 3, 4, 5, 6)
                                         for s in sim.stage_log)}, fh, indent=1)
    print(f"wrote {outdir}/trace.csv ({sim.clock.step_index} steps)")
    return EXIT_OK


def _load_tracedir(tracedir):
    from .postproc import read_events, read_trace

    trace_path = os.path.join(tracedir, "trace.csv")
    if not os.path.exists(trace_path):
        raise ConfigError(f"no trace.csv in {tracedir}")
    trace = read_trace(trace_path)
    events_path = os.path.join(tracedir, "events.csv")
    events = read_events(events_path) if os.path.exists(events_path) else []
    run_path = os.path.join(tracedir, "run.json")
    t_hb = None
    if os.path.exists(run_path):
        with open(run_path) as fh:
            t_hb = json.load(fh).get("t_hb")
    return trace, events, t_hb


def cmd_postprocess(args) -> int:
    from .circulation import MMHG_TO_PA
    from .postproc import write_trace

    trace, events, _ = _load_tracedir(args.tracedir)
    derived = [{
        "t": row["t"],
        "v_lv_ml": row["v_lv_ml"],
        "p_lv_mmhg": row["p_lv_pa"] / MMHG_TO_PA,
        "p_aa_mmhg": row["p_aa_pa"] / MMHG_TO_PA,
        "p_in_mmhg": row["p_in_pa"] / MMHG_TO_PA,
        "p_out_mmhg": row["p_out_pa"] / MMHG_TO_PA,
        "q_mv_ml_s": row["q_mv_ml_s"], "q_av_ml_s": row["q_av_ml_s"],
        "v_tot_ml": row["v_tot_ml"],
    } for row in trace]
    out = os.path.join(args.tracedir, "derived.csv")
    write_trace(out, derived)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_indicators(args) -> int:
    from .postproc import compute_indicators

    trace, events, t_hb = _load_tracedir(args.tracedir)
    report = compute_indicators(trace, events, t_hb=t_hb)
    text = json.dumps(report.asdict(), indent=1)
    with open(os.path.join(args.tracedir, "indicators.json"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cardiosim")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="run a simulation from a TOML config")
    p.add_argument("config")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("postprocess", help="derived quantities from a trace")
    p.add_argument("tracedir")
    p.set_defaults(func=cmd_postprocess)
    p = sub.add_parser("indicators", help="physiological indicator report")
    p.add_argument("tracedir")
    p.set_defaults(func=cmd_indicators)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
