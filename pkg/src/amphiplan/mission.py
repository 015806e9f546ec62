"""The online loop: sense, update the roadmap, replan, fly one spline piece.

At every node arrival the vehicle senses, folds the reading into its map,
re-prices the edges whose voxels changed, adds roadmap nodes inside the sensed
region and repairs the D* Lite solution.  It then builds a spline from its
actual state through the next path node toward the one after, and flies only
the first piece.  The third node is dropped on arrival whatever the replanner
decides next.

Before leaving a node the vehicle also inspects the straight edge it is about
to fly (every voxel the edge touches).  Rock found there is confirmed and the
vehicle replans on the spot, so it never commits to an edge through unseen
rock.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .control import ControllerGains, build_spline, eval_spline
from .costtable import SettlingCriterion
from .planner import (DStarLite, EdgeCase, MotionGraph, PlannerConfig, complete_edge_case,
                      free_return_path, prm_on_the_go, sample_prm)
from .simulate import TRACE_COLUMNS, Executor, SegmentResult
from .vehicle import MediumParams, VehicleParams, VehicleState, world_to_inertial
from .voxelworld import (CONFIRMED_OBSTACLE, OCCUPIED, SensorParams, VoxelGrid, apply_reading,
                         sense)

log = logging.getLogger(__name__)


class Outcome(enum.Enum):
    REACHED_GOAL = "ReachedGoal"
    NO_PATH = "NoPath"
    BATTERY_EXHAUSTED = "BatteryExhausted"
    STEP_LIMIT = "StepLimit"
    COLLISION = "Collision"
    DIVERGED = "Diverged"


@dataclass
class MissionConfig:
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    gains_air: ControllerGains = field(default_factory=ControllerGains.air)
    gains_water: ControllerGains = field(default_factory=ControllerGains.water)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    air: MediumParams = field(default_factory=MediumParams.air)
    water: MediumParams = field(default_factory=MediumParams.water)
    v_c: float = 1.0
    sensor: SensorParams = field(default_factory=SensorParams)
    battery: float = 1.2e6
    max_steps: int = 400
    seed: int = 0
    dt: float = 0.005
    goal_speed: float = 0.05
    max_tracking_error: float = 3.0
    record_trace: bool = True

    def __post_init__(self):
        if self.battery <= 0:
            raise ValueError("battery capacity must be positive")


@dataclass
class MissionResult:
    solved: bool
    reason: Outcome
    graph_cost: float
    actual_cost: float
    path: list
    length: float
    duration: float
    replans: int
    graph_length: float = 0.0
    graph_duration: float = 0.0
    trace: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, len(TRACE_COLUMNS))))
    initial_path: list | None = None
    return_path: list | None = None
    confirmed_counts: list = field(default_factory=list)
    diagnostic: str = ""

    @property
    def mean_speed(self):
        return self.length / self.duration if self.duration > 0 else 0.0

    @property
    def graph_speed(self):
        """Mean speed implied by the stop-stop edges of the flown path."""
        return self.graph_length / self.graph_duration if self.graph_duration > 0 else 0.0

    def write_trace(self, path):
        write_trace_csv(self.trace, path)


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([f"{x:.10g}" for x in row])


def next_triple(path, current=None):
    """Current node and the next two; the last node repeats near the goal."""
    if not path:
        raise ValueError("empty path")
    if current is not None and path[0] != current:
        raise ValueError("path does not start at the current node")
    if len(path) == 1:
        return path[0], path[0], path[0]
    n2 = path[2] if len(path) > 2 else path[1]
    return path[0], path[1], n2


def medium_switch_execute(segment, state: VehicleState, water_level, executor: Executor | None = None,
                          **run_kw) -> SegmentResult:
    """Fly ``segment`` with dynamics and controller chosen from the height each step."""
    ex = executor or Executor()
    ex.water_level = water_level
    ex.force_medium = -1
    return ex.run(state, segment, **run_kw)


def _trace_length(trace):
    if len(trace) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(trace[:, 1:4], axis=0), axis=1)))


def _probe_edge(env: VoxelGrid, world: VoxelGrid, graph: MotionGraph, u, v):
    """Confirm the rock on edge ``u -> v``; return newly confirmed voxels."""
    vox = graph.succ[u][v].voxels
    hit = [x for x in vox if env.cells[x] == OCCUPIED and world.cells[x] != CONFIRMED_OBSTACLE]
    for x in hit:
        world.cells[x] = CONFIRMED_OBSTACLE
    return hit


def _reference_hits(env: VoxelGrid, world: VoxelGrid, seg, t_end, dt=0.01):
    """Whether the reference up to ``t_end`` enters rock, and the rock voxels
    it newly confirms."""
    ts = np.arange(seg.t0, t_end + 0.5 * dt, dt)
    ts[-1] = min(ts[-1], seg.t2)
    pts = np.array([eval_spline(seg, t)[0] for t in ts]) / env.resolution
    idx = np.floor(pts + 0.5).astype(int)
    idx = np.clip(idx, 0, np.asarray(env.dims) - 1)
    rock = env.cells[tuple(idx.T)] == OCCUPIED
    new = sorted({v for v in map(tuple, idx[rock]) if world.cells[v] != CONFIRMED_OBSTACLE})
    for v in new:
        world.cells[v] = CONFIRMED_OBSTACLE
    return bool(rock.any()), new


def _failure(r: SegmentResult, state):
    if r.status == "collision":
        return Outcome.COLLISION, f"entered rock near t={state.t:.2f}"
    return Outcome.DIVERGED, f"{r.status} near t={state.t:.2f}"


def run_mission(env: VoxelGrid, world: VoxelGrid, start, goal, config: MissionConfig, tables,
                graph: MotionGraph | None = None) -> MissionResult:
    """Fly from voxel ``start`` to voxel ``goal``, mutating the belief map ``world``."""
    start = tuple(int(c) for c in start)
    goal = tuple(int(c) for c in goal)
    if env.cells[start] == OCCUPIED:
        raise ValueError("start voxel is occupied")
    pc = config.planner
    rng = np.random.default_rng(config.seed + 7919)
    if graph is None:
        graph = sample_prm(world, pc, tables, config.seed, start, goal)
    res = env.resolution
    level = env.water.level if env.water is not None else -math.inf
    ex = Executor(vp=config.vehicle, air=config.air, water=config.water,
                  gains_air=config.gains_air, gains_water=config.gains_water,
                  water_level=level, dt=config.dt, max_tracking_error=config.max_tracking_error,
                  obstacles=(env.cells == OCCUPIED).astype(np.uint8), resolution=res)
    crit = SettlingCriterion()
    state = VehicleState(x=world_to_inertial(env.center(start)))
    accel = np.zeros(3)
    cur = graph.start
    dstar = DStarLite(graph, cur)
    dstar.compute()
    traces = []
    visited = [cur]
    sensed_all = set()
    replans = 0
    graph_cost = graph_length = graph_duration = 0.0
    initial_path = None
    outcome = None
    diagnostic = ""
    return_path = None
    confirmed = []
    expected = None
    braked = False

    def n_confirmed():
        return int(np.count_nonzero(world.cells >= 2))

    for _step in range(config.max_steps):
        # sense at the node and fold everything into the graph
        reading = sense(env, world, env.center(graph.nodes[cur]), env.water, config.sensor)
        changed = apply_reading(world, reading)
        sensed_all |= reading.free
        confirmed.append(n_confirmed())
        pairs = graph.reclassify(changed)
        pairs += prm_on_the_go(graph, reading.free, pc.k_new, rng)
        dstar.update(pairs)
        path = dstar.path()
        if expected is not None:
            on_path = set(zip(expected[:-1], expected[1:]))
            touched = any((u, v) in on_path or (v, u) in on_path for u, v in pairs)
            if path != expected or touched:
                replans += 1
        while True:
            if path is None and pc.edge_case is EdgeCase.COMPLETE:
                path = complete_edge_case(graph, dstar, sensed_all)
            if path is None:
                outcome = Outcome.NO_PATH
                return_path = free_return_path(graph, cur, graph.start)
                break
            if initial_path is None:
                initial_path = [graph.nodes[i] for i in path]
            if len(path) == 1:
                break
            hit = _probe_edge(env, world, graph, path[0], path[1])
            if not hit:
                break
            replans += 1
            dstar.update(graph.reclassify(hit))
            path = dstar.path()
        if outcome is not None or len(path) == 1:
            if outcome is None:
                outcome = Outcome.REACHED_GOAL
            break
        if state.E >= config.battery:
            outcome = Outcome.BATTERY_EXHAUSTED
            break
        expected = path[1:]
        n0, n1, n2 = next_triple(path, cur)
        p0, p1, p2 = (env.center(graph.nodes[i]) for i in (n0, n1, n2))
        x_world = np.array([state.x[0], -state.x[1], -state.x[2]])
        v_world = np.array([state.v[0], -state.v[1], -state.v[2]])
        x0 = (x_world, v_world, accel)
        seg = build_spline(x0, p1, p2, config.v_c, t0=state.t, n0=p0)
        final = n1 == graph.goal
        hit, rock = (False, []) if braked else _reference_hits(env, world, seg,
                                                                seg.t2 if final else seg.t1)
        if hit:
            # corner too tight at speed: stop at the next node instead
            seg = build_spline(x0, p1, p1, config.v_c, t0=state.t, n0=p0)
            stop_here = True
            hit, more = _reference_hits(env, world, seg, seg.t1)
            dstar.update(graph.reclassify(rock + more))
            if hit:
                # not even that: come to rest back on the current node first
                brake = build_spline(x0, p0, p0, config.v_c, t0=state.t,
                                     duration=max(1.0, 2.0 * float(np.linalg.norm(v_world))))
                r = ex.run(state, brake, settle=True, target=p0, tol=crit.corridor(p1 - p0),
                           speed_tol=config.goal_speed, hold=0.0,
                           t_max=brake.t1 + crit.timeout, record=True)
                traces.append(r.trace)
                state = r.state
                accel = np.zeros(3)
                braked = True
                if r.status != "settled":
                    outcome, diagnostic = _failure(r, state)
                    break
                continue
        else:
            stop_here = False
        braked = False
        if final or stop_here:
            d = p1 - p0
            r = ex.run(state, seg, settle=True, target=p1, tol=crit.corridor(d),
                       speed_tol=config.goal_speed, hold=0.0,
                       t_max=seg.t1 + crit.timeout, record=True)
        else:
            r = ex.run(state, seg, t_stop=seg.t1, record=True)
        traces.append(r.trace)
        graph_cost += graph.succ[n0][n1].base
        graph_length += float(np.linalg.norm(p1 - p0))
        graph_duration += graph.duration(n0, n1)
        state = r.state
        if stop_here or final:
            accel = np.zeros(3)
        elif len(r.trace):
            accel = r.trace[-1, 7:10].copy()
        if not r.ok:
            outcome, diagnostic = _failure(r, state)
            break
        if state.E >= config.battery:
            outcome = Outcome.BATTERY_EXHAUSTED
            break
        cur = n1
        visited.append(cur)
        dstar.move_to(cur)
        if final:
            outcome = Outcome.REACHED_GOAL
            break
    else:
        outcome = Outcome.STEP_LIMIT
    trace = np.concatenate(traces) if traces else np.zeros((0, len(TRACE_COLUMNS)))
    duration = state.t
    return MissionResult(
        solved=outcome is Outcome.REACHED_GOAL, reason=outcome, graph_cost=graph_cost,
        actual_cost=state.E, path=[graph.nodes[i] for i in visited], length=_trace_length(trace),
        duration=duration, replans=replans, graph_length=graph_length,
        graph_duration=graph_duration,
        trace=trace if config.record_trace else trace[:0], initial_path=initial_path,
        return_path=None if return_path is None else [graph.nodes[i] for i in return_path],
        confirmed_counts=confirmed, diagnostic=diagnostic)
