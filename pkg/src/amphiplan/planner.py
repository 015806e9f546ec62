"""Roadmap construction, edge pricing and incremental replanning.

Edges are directed because stop-stop costs are not symmetric in heave.  An
edge whose voxels touch an assumed obstacle costs ``C_large`` instead of
infinity, so the search keeps unexplored routes open; only obstacles confirmed
by the sensor make an edge infinite.

Replanning is D* Lite working backward from the goal.  Keys compare
lexicographically with the node id as the last tie-break, which makes every
plan reproducible.
"""
from __future__ import annotations

import enum
import heapq
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .costtable import transition_cost
from .voxelworld import (ASSUMED_FREE, CONFIRMED_FREE, EdgeClass, Medium, VoxelGrid,
                         classify_edge, line_voxels)

log = logging.getLogger(__name__)

INF = math.inf


class Mode(enum.Enum):
    HYBRID = "hybrid"
    AIR_ONLY = "air"
    WATER_ONLY = "water"

    def allows(self, medium: Medium):
        return self is Mode.HYBRID or self.value == medium.value


class EdgeCase(enum.Enum):
    PRACTICAL = "practical"
    COMPLETE = "complete"


@dataclass
class PlannerConfig:
    """``density`` is the fraction of candidate voxels turned into nodes; an
    explicit ``N`` overrides it."""

    N: int | None = None
    density: float = 0.10
    r_max_edge: float = 5.0
    k_new: int = 3
    c_large: float | None = None
    mode: Mode = Mode.HYBRID
    edge_case: EdgeCase = EdgeCase.PRACTICAL
    assumed_cost: str = "c_large"

    def __post_init__(self):
        if not 0 < self.r_max_edge <= 8:
            raise ValueError("r_max_edge must lie in (0, 8]")
        self.mode = Mode(self.mode)
        self.edge_case = EdgeCase(self.edge_case)
        if self.assumed_cost not in ("c_large", "infinite"):
            raise ValueError("assumed_cost is 'c_large' or 'infinite'")


def compute_c_large(grid: VoxelGrid, tables):
    """Cost that dominates crossing the largest grid dimension twice at the
    dearest unit-move rate."""
    L = max(grid.dims) * grid.resolution
    return 2.5 * L * max(t.unit_cost() for t in tables.values())


def min_rate(tables):
    return min(t.min_rate() for t in tables.values())


def heuristic(a, b, tables=None, rate=None):
    """Euclidean distance times the cheapest energy per meter in any table."""
    r = min_rate(tables) if rate is None else rate
    return math.dist(a, b) * r


@dataclass
class Edge:
    base: float
    cls: EdgeClass
    voxels: tuple


class MotionGraph:
    """Nodes at voxel centers; directed, priced edges."""

    def __init__(self, world: VoxelGrid, tables, config: PlannerConfig, c_large=None):
        self.world = world
        self.tables = tables
        self.config = config
        self.c_large = c_large if c_large is not None else (
            config.c_large if config.c_large is not None else compute_c_large(world, tables))
        self.rate = min_rate(tables)
        self.nodes: list[tuple] = []
        self.index: dict[tuple, int] = {}
        self.succ: dict[int, dict[int, Edge]] = {}
        self.pred: dict[int, set] = {}
        self.by_voxel: dict[tuple, set] = {}
        self._tree = None
        self._tree_n = 0
        self.start = None
        self.goal = None
        self.relaxed = []

    # ---- geometry
    def medium(self, v):
        return self.world.medium_of(v)

    def position(self, nid):
        return self.world.center(self.nodes[nid])

    def __len__(self):
        return len(self.nodes)

    def cost(self, u, v):
        e = self.succ[u].get(v)
        if e is None:
            return INF
        if e.cls == EdgeClass.CONFIRMED_BLOCKED:
            return INF
        if e.cls == EdgeClass.ASSUMED_BLOCKED:
            return self.c_large if self.config.assumed_cost == "c_large" else INF
        return e.base

    def h(self, u, v):
        return math.dist(self.nodes[u], self.nodes[v]) * self.world.resolution * self.rate

    # ---- construction
    def add_node(self, v):
        v = tuple(int(c) for c in v)
        if v in self.index:
            return self.index[v]
        nid = len(self.nodes)
        self.nodes.append(v)
        self.index[v] = nid
        self.succ[nid] = {}
        self.pred[nid] = set()
        return nid

    def _price(self, a, b):
        res = self.world.resolution
        ma, mb = self.medium(a), self.medium(b)
        d = tuple(q - p for p, q in zip(a, b))
        if ma == mb:
            return self.tables[ma.value].lookup(d)
        return transition_cost(self.tables, self.world.center(a), self.world.center(b),
                               self.world.water.level, res)

    def duration(self, u, v):
        """Stop-stop time of edge ``u -> v`` in seconds."""
        a, b = self.nodes[u], self.nodes[v]
        ma, mb = self.medium(a), self.medium(b)
        if ma == mb:
            return self.tables[ma.value].lookup_duration(tuple(q - p for p, q in zip(a, b)))
        return transition_cost(self.tables, self.world.center(a), self.world.center(b),
                               self.world.water.level, self.world.resolution, duration=True)

    def connectable(self, a, b, radius=None):
        r = self.config.r_max_edge if radius is None else radius
        if a == b or math.dist(a, b) * self.world.resolution > r + 1e-9:
            return False
        if self.medium(a) != self.medium(b) and (a[0] != b[0] or a[1] != b[1]):
            return False
        return True

    def connect(self, u, v):
        """Add both directed edges between two nodes; returns True if new."""
        if v in self.succ[u]:
            return False
        a, b = self.nodes[u], self.nodes[v]
        vox = tuple(line_voxels(self.world.center(a), self.world.center(b), self.world))
        cls = classify_edge(self.world, None, None, voxels=list(vox))
        self.succ[u][v] = Edge(self._price(a, b), cls, vox)
        self.succ[v][u] = Edge(self._price(b, a), cls, vox)
        self.pred[v].add(u)
        self.pred[u].add(v)
        for x in vox:
            self.by_voxel.setdefault(x, set()).add((min(u, v), max(u, v)))
        return True

    def _kdtree(self):
        if self._tree is None or self._tree_n != len(self.nodes):
            self._tree = cKDTree(np.array(self.nodes, dtype=float))
            self._tree_n = len(self.nodes)
        return self._tree

    def connect_node(self, u, radius=None):
        """Connect ``u`` to every compatible node within range; new pairs returned."""
        r = self.config.r_max_edge if radius is None else radius
        tree = self._kdtree()
        out = []
        for v in sorted(tree.query_ball_point(self.nodes[u], r / self.world.resolution + 1e-9)):
            if v != u and self.connectable(self.nodes[u], self.nodes[v], r) and self.connect(u, v):
                out.append((u, v))
        return out

    def connect_all(self):
        tree = self._kdtree()
        r = self.config.r_max_edge / self.world.resolution + 1e-9
        for u, v in sorted(tree.query_pairs(r)):
            if self.connectable(self.nodes[u], self.nodes[v]):
                self.connect(u, v)

    def reclassify(self, voxels):
        """Refresh classes of edges through changed voxels; return affected pairs."""
        pairs = set()
        for x in voxels:
            pairs |= self.by_voxel.get(tuple(x), set())
        changed = []
        for u, v in sorted(pairs):
            e = self.succ[u][v]
            cls = classify_edge(self.world, None, None, voxels=list(e.voxels))
            if cls != e.cls:
                e.cls = cls
                self.succ[v][u].cls = cls
                changed.append((u, v))
        return changed

    def edges(self):
        for u in sorted(self.succ):
            for v in sorted(self.succ[u]):
                yield u, v, self.succ[u][v]

    def to_dict(self):
        return {
            "c_large": self.c_large,
            "start": self.start,
            "goal": self.goal,
            "nodes": [{"id": i, "voxel": list(n), "medium": self.medium(n).value}
                      for i, n in enumerate(self.nodes)],
            "edges": [{"from": u, "to": v, "base": e.base, "class": e.cls.name.lower(),
                       "cost": self.cost(u, v)} for u, v, e in self.edges()],
        }

    def export(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True, default=str)


def candidate_voxels(world: VoxelGrid, mode: Mode):
    """Interior voxels believed free, restricted to the mode's medium."""
    c = world.cells
    ok = np.isin(c, (ASSUMED_FREE, CONFIRMED_FREE))
    ok[[0, -1], :, :] = False
    ok[:, [0, -1], :] = False
    ok[:, :, [0, -1]] = False
    if world.water is not None and mode is not Mode.HYBRID:
        h = np.arange(c.shape[2]) * world.resolution
        air = h >= world.water.level
        ok &= (air if mode is Mode.AIR_ONLY else ~air)[None, None, :]
    return ok


def sample_prm(world: VoxelGrid, config: PlannerConfig, tables, seed, start, goal,
               c_large=None) -> MotionGraph:
    """Roadmap over believed-free voxels plus start and goal.

    Every voxel draws one uniform key from ``seed``; a voxel becomes a node
    when its key is under ``density`` (or among the ``N`` smallest keys).
    Graphs of different modes built with the same seed and density are
    therefore nested.
    """
    start = tuple(int(c) for c in start)
    goal = tuple(int(c) for c in goal)
    for name, v in (("start", start), ("goal", goal)):
        if world.cells[v] not in (ASSUMED_FREE, CONFIRMED_FREE):
            raise ValueError(f"{name} voxel {v} is occupied")
        if world.water is not None and not config.mode.allows(world.medium_of(v)):
            raise ValueError(f"{name} voxel {v} is outside the planner's medium")
    g = MotionGraph(world, tables, config, c_large)
    keys = np.random.default_rng(seed).random(world.dims)
    ok = candidate_voxels(world, config.mode)
    cand = np.argwhere(ok)
    kv = keys[ok]
    if config.N is not None:
        chosen = cand[np.argsort(kv, kind="stable")[:config.N]]
    else:
        chosen = cand[kv < config.density]
    g.start = g.add_node(start)
    g.goal = g.add_node(goal)
    for v in sorted(map(tuple, chosen)):
        g.add_node(v)
    g.connect_all()
    for nid in (g.start, g.goal):
        if not g.succ[nid]:
            relaxed = g.connect_node(nid, radius=min(1.5 * config.r_max_edge, 8.0))
            if relaxed:
                g.relaxed.append(nid)
                log.info("node %s connected with relaxed radius", g.nodes[nid])
    return g


def prm_on_the_go(graph: MotionGraph, sensed, k_new, rng):
    """Add up to ``k_new`` nodes drawn from sensed free voxels; new edge pairs returned."""
    if k_new <= 0:
        return []
    ok = candidate_voxels(graph.world, graph.config.mode)
    cand = sorted(v for v in sensed if ok[v] and v not in graph.index)
    if not cand:
        return []
    pick = rng.choice(len(cand), size=min(k_new, len(cand)), replace=False)
    new = []
    for i in sorted(pick):
        nid = graph.add_node(cand[i])
        new.extend(graph.connect_node(nid))
    return new


# --------------------------------------------------------------------------
# D* Lite

class DStarLite:
    """Incremental shortest paths to ``graph.goal`` from a moving start."""

    def __init__(self, graph: MotionGraph, start):
        self.G = graph
        self.g: dict[int, float] = {}
        self.rhs: dict[int, float] = {graph.goal: 0.0}
        self.km = 0.0
        self.start = start
        self.last = start
        self.heap = []
        self.open: dict[int, tuple] = {}
        self._push(graph.goal)
        self.expansions = 0

    def key(self, s):
        m = min(self.g.get(s, INF), self.rhs.get(s, INF))
        return (m + self.G.h(self.start, s) + self.km, m)

    def _push(self, s):
        k = self.key(s)
        self.open[s] = k
        heapq.heappush(self.heap, (k[0], k[1], s))

    def _top(self):
        while self.heap:
            k0, k1, s = self.heap[0]
            if self.open.get(s) == (k0, k1):
                return (k0, k1), s
            heapq.heappop(self.heap)
        return (INF, INF), None

    def update_vertex(self, u):
        G = self.G
        if u != G.goal:
            best = INF
            for v in G.succ[u]:
                c = G.cost(u, v)
                if c < INF:
                    best = min(best, c + self.g.get(v, INF))
            self.rhs[u] = best
        self.open.pop(u, None)
        if self.g.get(u, INF) != self.rhs.get(u, INF):
            self._push(u)

    def compute(self):
        while True:
            k_old, u = self._top()
            if u is None:
                break
            ks = self.key(self.start)
            if not (k_old < ks or self.rhs.get(self.start, INF) != self.g.get(self.start, INF)):
                break
            self.expansions += 1
            k_new = self.key(u)
            if k_old < k_new:
                self._push(u)
                continue
            heapq.heappop(self.heap)
            del self.open[u]
            if self.g.get(u, INF) > self.rhs.get(u, INF):
                self.g[u] = self.rhs[u]
                for p in sorted(self.G.pred[u]):
                    self.update_vertex(p)
            else:
                self.g[u] = INF
                for p in sorted(self.G.pred[u]):
                    self.update_vertex(p)
                self.update_vertex(u)

    def move_to(self, s):
        self.km += self.G.h(self.last, s)
        self.last = s
        self.start = s

    def update(self, changed_pairs):
        """Account for edges whose cost changed or that were just added."""
        touched = set()
        for u, v in changed_pairs:
            touched.add(u)
            touched.add(v)
        for s in sorted(touched):
            self.update_vertex(s)
        self.compute()

    def cost_to_goal(self, s=None):
        return self.g.get(self.start if s is None else s, INF)

    def path(self):
        """Greedy successor chain from the current start, or None without a path."""
        G = self.G
        s = self.start
        if self.g.get(s, INF) == INF:
            return None
        out = [s]
        seen = {s}
        while s != G.goal:
            best, nxt = INF, None
            for v in sorted(G.succ[s]):
                c = G.cost(s, v) + self.g.get(v, INF)
                if c < best:
                    best, nxt = c, v
            if nxt is None or nxt in seen:
                return None
            out.append(nxt)
            seen.add(nxt)
            s = nxt
        return out


def dijkstra_to_goal(graph: MotionGraph):
    """Cost-to-goal for every node by plain Dijkstra over reversed edges."""
    dist = {graph.goal: 0.0}
    pq = [(0.0, graph.goal)]
    done = set()
    while pq:
        d, v = heapq.heappop(pq)
        if v in done:
            continue
        done.add(v)
        for u in graph.pred[v]:
            c = graph.cost(u, v)
            if c == INF:
                continue
            nd = d + c
            if nd < dist.get(u, INF):
                dist[u] = nd
                heapq.heappush(pq, (nd, u))
    return dist


def path_cost(graph: MotionGraph, path):
    return sum(graph.cost(u, v) for u, v in zip(path[:-1], path[1:]))


def free_return_path(graph: MotionGraph, current, target):
    """Cheapest route over edges classified free (no assumed obstacles)."""
    dist = {current: 0.0}
    prev = {}
    pq = [(0.0, current)]
    while pq:
        d, u = heapq.heappop(pq)
        if u == target:
            break
        if d > dist.get(u, INF):
            continue
        for v, e in sorted(graph.succ[u].items()):
            if e.cls != EdgeClass.FREE:
                continue
            nd = d + e.base
            if nd < dist.get(v, INF):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(pq, (nd, v))
    if target not in dist:
        return None
    out = [target]
    while out[-1] != current:
        out.append(prev[out[-1]])
    return out[::-1]


def complete_edge_case(graph: MotionGraph, dstar: DStarLite, sensed_all):
    """Add every sensed free voxel as a node until a finite path appears.

    Returns the path, or None once the sensed set is exhausted.
    """
    ok = candidate_voxels(graph.world, graph.config.mode)
    pending = sorted(v for v in sensed_all if ok[v] and v not in graph.index)
    pairs = []
    for v in pending:
        nid = graph.add_node(v)
        pairs.extend(graph.connect_node(nid))
    dstar.update(pairs)
    return dstar.path()
