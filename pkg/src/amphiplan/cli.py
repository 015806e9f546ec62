"""Command line entry points: gen-cave, build-table, run-mission and bench."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import bench
from .control import ControllerGains
from .costtable import REACH, TableParams, build_table, cached_tables
from .mission import MissionConfig, run_mission
from .planner import EdgeCase, Mode, PlannerConfig
from .vehicle import MediumParams, VehicleParams
from .voxelworld import CaveParams, VoxelGrid, generate_cave, initial_map

log = logging.getLogger("amphiplan")

DEFAULT_TABLES = Path(".amphiplan") / "tables"


def load_params(path=None) -> TableParams:
    """Read a JSON parameter file; every key is optional.

    Recognised keys: ``v_c``, ``dt``, ``resolution``, ``vehicle`` (fields of
    the vehicle), ``air`` and ``water`` (medium fields) and ``gains`` with
    ``air``/``water`` entries holding ``Kp_pos``, ``Kd_pos``, ``Kp_att`` and
    ``Kd_att`` as scalars or 3-vectors.
    """
    p = TableParams()
    if path is None:
        return p
    raw = json.loads(Path(path).read_text())
    unknown = set(raw) - {"v_c", "dt", "resolution", "vehicle", "air", "water", "gains"}
    if unknown:
        raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
    kw = {k: raw[k] for k in ("v_c", "dt", "resolution") if k in raw}
    if "vehicle" in raw:
        kw["vehicle"] = VehicleParams(**raw["vehicle"])
    for name, base in (("air", MediumParams.air()), ("water", MediumParams.water())):
        if name in raw:
            kw[name] = replace(base, **raw[name])
    gains = raw.get("gains", {})
    for name, base in (("air", ControllerGains.air()), ("water", ControllerGains.water())):
        if name in gains:
            kw[f"gains_{name}"] = ControllerGains(**{**base.to_dict(), **gains[name]})
    return replace(p, **kw)


def _triple(s):
    parts = [int(v) for v in s.replace(",", " ").split()]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three integers like 4,17,12")
    return tuple(parts)


def cmd_gen_cave(a):
    env, _ = generate_cave(CaveParams(n_bores=a.bores, r_bore=a.radius), a.dims, a.seed,
                           a.resolution)
    env.save(a.out)
    if a.map_out:
        initial_map(env).save(a.map_out)
    free = int((env.cells == 0).sum())
    print(f"{a.out}: {env.dims} voxels, {free} free, water level {env.water.level:g} m")
    return 0


def cmd_build_table(a):
    params = load_params(a.params)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    media = ("air", "water") if a.medium == "both" else (a.medium,)
    for medium in media:
        t = time.perf_counter()

        def progress(dx, reach, medium=medium):
            log.info("%s: dx=%d of %d done", medium, dx, reach)

        table = build_table(medium, params, a.reach, progress)
        path = out / f"{medium}_{table.params_hash[:16]}_r{a.reach}.tbl"
        table.save(path)
        print(f"{path}: min rate {table.min_rate():.2f} J/m, built in "
              f"{time.perf_counter() - t:.0f} s")
    return 0


def _mission_config(params: TableParams, a):
    pc = PlannerConfig(density=a.density, mode=Mode(a.mode), edge_case=EdgeCase(a.edge_case),
                       assumed_cost=a.assumed_cost)
    return MissionConfig(planner=pc, gains_air=params.gains_air, gains_water=params.gains_water,
                         vehicle=params.vehicle, air=params.air, water=params.water,
                         v_c=params.v_c, dt=params.dt, battery=a.battery, seed=a.seed)


def cmd_run_mission(a):
    params = load_params(a.params)
    env = VoxelGrid.load(a.env)
    world = VoxelGrid.load(a.map) if a.map else initial_map(env)
    if (a.start is None) != (a.goal is None):
        raise SystemExit("give both --start and --goal, or neither")
    if a.start is None:
        medium = a.medium or ("water" if a.mode == "water" else "air")
        start, goal = bench.pick_endpoints(env, world, medium, a.margin, a.seed)
    else:
        start, goal = a.start, a.goal
    tables = cached_tables(a.tables, params)
    res = run_mission(env, world, start, goal, _mission_config(params, a), tables)
    res.write_trace(a.trace)
    summary = {
        "start": list(start), "goal": list(goal), "mode": a.mode, "seed": a.seed,
        "outcome": res.reason.value, "solved": res.solved, "graph_cost": res.graph_cost,
        "actual_cost": res.actual_cost, "length": res.length, "duration": res.duration,
        "replans": res.replans, "path": [list(p) for p in res.path],
        "diagnostic": res.diagnostic,
    }
    if a.summary:
        Path(a.summary).write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"{res.reason.value}: graph {res.graph_cost:.0f} J, actual {res.actual_cost:.0f} J, "
          f"{len(res.path)} nodes, {res.replans} replans; trace in {a.trace}")
    return 0 if res.solved else 2


def cmd_bench(a):
    params = load_params(a.params)
    cfg = bench.BenchConfig(envs=a.envs, seed=a.seed, scale=a.scale, margin=a.margin,
                            workers=a.workers, params=params)
    tables = cached_tables(a.tables, params)
    t = time.perf_counter()
    records, skipped = bench.run_experiment(cfg, tables)
    stats = bench.summarize(records, skipped, cfg.battery)
    bench.write_outputs(records, stats, a.out)
    print(bench.report(stats))
    print(f"{len(records)} trials in {time.perf_counter() - t:.0f} s; outputs in {a.out}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="amphiplan", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-cave", help="generate a cave environment grid")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dims", type=_triple, default=(40, 40, 20))
    g.add_argument("--resolution", type=float, default=1.0)
    g.add_argument("--bores", type=int, default=CaveParams.n_bores)
    g.add_argument("--radius", type=float, default=CaveParams.r_bore)
    g.add_argument("--out", required=True, help="environment grid file")
    g.add_argument("--map-out", help="also write the initial belief map here")
    g.set_defaults(func=cmd_gen_cave)

    b = sub.add_parser("build-table", help="simulate stop-stop cost tables")
    b.add_argument("--medium", choices=("air", "water", "both"), default="both")
    b.add_argument("--reach", type=int, default=REACH)
    b.add_argument("--params", help="JSON parameter file")
    b.add_argument("--out", default=str(DEFAULT_TABLES), help="output directory")
    b.set_defaults(func=cmd_build_table)

    m = sub.add_parser("run-mission", help="fly one mission and write its trace")
    m.add_argument("--env", required=True, help="environment grid file")
    m.add_argument("--map", help="belief map grid file (default: initial map of --env)")
    m.add_argument("--mode", choices=[x.value for x in Mode], default="hybrid")
    m.add_argument("--start", type=_triple)
    m.add_argument("--goal", type=_triple)
    m.add_argument("--medium", choices=("air", "water"),
                   help="medium for automatically picked endpoints")
    m.add_argument("--margin", type=float, default=0.15)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--density", type=float, default=PlannerConfig.density)
    m.add_argument("--edge-case", choices=[x.value for x in EdgeCase], default="practical")
    m.add_argument("--assumed-cost", choices=("c_large", "infinite"), default="c_large")
    m.add_argument("--battery", type=float, default=1.2e6)
    m.add_argument("--params", help="JSON parameter file")
    m.add_argument("--tables", default=str(DEFAULT_TABLES), help="cost table directory")
    m.add_argument("--trace", required=True, help="output trace CSV")
    m.add_argument("--summary", help="output mission summary JSON")
    m.set_defaults(func=cmd_run_mission)

    c = sub.add_parser("bench", help="Monte Carlo planner comparison")
    c.add_argument("--envs", type=int)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--scale", choices=tuple(bench.SCALES), default="desk")
    c.add_argument("--margin", type=float, default=0.15)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--params", help="JSON parameter file")
    c.add_argument("--tables", default=str(DEFAULT_TABLES), help="cost table directory")
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return a.func(a)


if __name__ == "__main__":
    sys.exit(main())
