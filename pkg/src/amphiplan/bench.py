"""Monte Carlo comparison of hybrid and single-medium planners.

Each environment yields two problems, one with both endpoints in air and one
with both under water.  The hybrid planner attempts both; the air-only planner
the air problem and the water-only planner the water problem.  A run that does
not reach its goal is charged the full battery.

The statistics are written out by hand on top of the incomplete gamma and
beta functions from :mod:`scipy.special`.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import special

from .costtable import TableParams
from .mission import MissionConfig, run_mission
from .planner import Mode, PlannerConfig
from .voxelworld import ASSUMED_FREE, FREE, CaveParams, generate_cave, initial_map

log = logging.getLogger(__name__)

SCALES = {"desk": 20, "full": 200}
PROBLEMS = ("AirAir", "WaterWater")
ASSIGNMENT = {"AirAir": ("hybrid", "air"), "WaterWater": ("hybrid", "water")}


class EndpointFailure(RuntimeError):
    pass


class DegenerateStatistic(ValueError):
    """Raised when a test is undefined for the data (zero margin or variance)."""


@dataclass
class BenchConfig:
    envs: int | None = None
    seed: int = 0
    scale: str = "desk"
    margin: float = 0.15
    dims: tuple = (40, 40, 20)
    resolution: float = 1.0
    battery: float = 1.2e6
    density: float = 0.10
    max_steps: int = 400
    workers: int = 1
    cave: CaveParams = field(default_factory=CaveParams)
    params: TableParams = field(default_factory=TableParams)

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {sorted(SCALES)}")
        if self.envs is None:
            self.envs = SCALES[self.scale]
        if not 0.0 < self.margin < 0.5:
            raise ValueError("endpoint margin must lie in (0, 0.5) of the x extent")
        self.dims = tuple(int(d) for d in self.dims)


@dataclass
class TrialRecord:
    env_seed: int
    problem: str
    mode: str
    solved: bool
    reason: str
    graph_cost: float
    actual_cost: float
    energy_used: float
    length: float
    graph_length: float
    mean_speed: float
    graph_speed: float
    duration: float
    replans: int

    @property
    def abs_diff(self):
        """Absolute prediction difference in percent of the actual cost."""
        return abs(self.rel_diff)

    @property
    def rel_diff(self):
        """Graph minus actual cost in percent of actual; positive over-predicts."""
        return 100.0 * (self.graph_cost - self.actual_cost) / self.actual_cost

    @property
    def speed_increase(self):
        if self.graph_speed <= 0:
            return math.nan
        return 100.0 * (self.mean_speed - self.graph_speed) / self.graph_speed


# --------------------------------------------------------------------------
# problems and trials

def pick_endpoints(env, world, medium, margin=0.15, seed=0):
    """Start near the low-x wall and goal near the high-x wall, both in ``medium``."""
    if not 0.0 < margin < 0.5:
        raise ValueError("endpoint margin must lie in (0, 0.5) of the x extent")
    free = (env.cells == FREE) & (world.cells == ASSUMED_FREE)
    free[[0, -1], :, :] = False
    free[:, [0, -1], :] = False
    free[:, :, [0, -1]] = False
    idx = np.argwhere(free)
    air = idx[:, 2] * env.resolution >= env.water.level
    idx = idx[air if medium == "air" else ~air]
    nx = env.dims[0]
    m = margin * nx
    lo = idx[idx[:, 0] < m]
    hi = idx[idx[:, 0] > nx - 1 - m]
    if len(lo) == 0 or len(hi) == 0:
        raise EndpointFailure(f"no free {medium} voxels within {margin:.0%} of both x walls")
    rng = np.random.default_rng([seed, 0 if medium == "air" else 1])
    s = tuple(int(c) for c in lo[rng.integers(len(lo))])
    g = tuple(int(c) for c in hi[rng.integers(len(hi))])
    return s, g


def _record(env_seed, problem, mode, res, battery):
    solved = res.solved
    return TrialRecord(
        env_seed=env_seed, problem=problem, mode=mode, solved=solved, reason=res.reason.value,
        graph_cost=res.graph_cost, actual_cost=res.actual_cost if solved else battery,
        energy_used=res.actual_cost, length=res.length, graph_length=res.graph_length,
        mean_speed=res.mean_speed, graph_speed=res.graph_speed, duration=res.duration,
        replans=res.replans)


def run_environment(config: BenchConfig, index, tables):
    """All trials of one environment, plus the number of skipped problems."""
    env_seed = config.seed * 100003 + index
    env, _ = generate_cave(config.cave, config.dims, env_seed, config.resolution)
    out, skipped = [], 0
    for problem in PROBLEMS:
        medium = "air" if problem == "AirAir" else "water"
        try:
            start, goal = pick_endpoints(env, initial_map(env), medium, config.margin, env_seed)
        except EndpointFailure as exc:
            log.warning("env %d %s skipped: %s", env_seed, problem, exc)
            skipped += 1
            continue
        for mode in ASSIGNMENT[problem]:
            p = config.params
            mc = MissionConfig(planner=PlannerConfig(density=config.density, mode=Mode(mode)),
                               gains_air=p.gains_air, gains_water=p.gains_water,
                               vehicle=p.vehicle, air=p.air, water=p.water, v_c=p.v_c, dt=p.dt,
                               battery=config.battery, max_steps=config.max_steps,
                               seed=env_seed, record_trace=False)
            t = time.perf_counter()
            try:
                res = run_mission(env, initial_map(env), start, goal, mc, tables)
            except Exception:  # a broken trial is recorded, not fatal
                log.exception("env %d %s %s raised", env_seed, problem, mode)
                out.append(TrialRecord(env_seed, problem, mode, False, "Error", math.nan,
                                       config.battery, math.nan, 0.0, 0.0, 0.0, 0.0, 0.0, 0))
                continue
            out.append(_record(env_seed, problem, mode, res, config.battery))
            log.info("env %d %s %-6s %s %.0f J in %.1f s", env_seed, problem, mode,
                     res.reason.value, res.actual_cost, time.perf_counter() - t)
    return out, skipped


def _run_env_star(args):
    return run_environment(*args)


def run_experiment(config: BenchConfig, tables):
    """Records in (environment, problem, mode) order and the skip count."""
    jobs = [(config, i, tables) for i in range(config.envs)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_env_star, jobs))
    else:
        results = [run_environment(*j) for j in jobs]
    records = [r for recs, _ in results for r in recs]
    return records, sum(s for _, s in results)


# --------------------------------------------------------------------------
# statistics

def chi2_proportions(a_solved, a_total, b_solved, b_total):
    """Pearson chi-square of a 2x2 success table, one degree of freedom."""
    if a_total <= 0 or b_total <= 0:
        raise ValueError("totals must be positive")
    a, b = a_solved, a_total - a_solved
    c, d = b_solved, b_total - b_solved
    n = a + b + c + d
    margins = (a + b) * (c + d) * (a + c) * (b + d)
    if margins == 0:
        raise DegenerateStatistic("a row or column of the table is empty")
    stat = n * (a * d - b * c) ** 2 / margins
    return float(stat), float(special.gammaincc(0.5, stat / 2.0))


def _sample(xs):
    x = np.asarray(xs, dtype=float)
    if x.size < 3:
        raise ValueError("need at least three observations")
    return x


def f_test(xs, ys):
    """Variance ratio test, two-sided."""
    x, y = _sample(xs), _sample(ys)
    vx, vy = x.var(ddof=1), y.var(ddof=1)
    if vy == 0 or vx == 0:
        raise DegenerateStatistic("zero variance")
    F = vx / vy
    d1, d2 = x.size - 1, y.size - 1
    cdf = special.betainc(d1 / 2.0, d2 / 2.0, d1 * F / (d1 * F + d2))
    return float(F), float(min(1.0, 2.0 * min(cdf, 1.0 - cdf)))


def t_test(xs, ys, equal_var=True):
    """Two-sample t test, two-sided; pooled variance unless ``equal_var`` is False."""
    x, y = _sample(xs), _sample(ys)
    nx, ny = x.size, y.size
    vx, vy = x.var(ddof=1), y.var(ddof=1)
    diff = x.mean() - y.mean()
    if equal_var:
        df = nx + ny - 2
        sp = ((nx - 1) * vx + (ny - 1) * vy) / df
        se = math.sqrt(sp * (1.0 / nx + 1.0 / ny))
    else:
        a, b = vx / nx, vy / ny
        se = math.sqrt(a + b)
        df = (a + b) ** 2 / (a * a / (nx - 1) + b * b / (ny - 1)) if a + b > 0 else math.nan
    if se == 0:
        if diff == 0:
            return 0.0, 1.0
        raise DegenerateStatistic("zero variance in both samples")
    t = diff / se
    p = special.betainc(df / 2.0, 0.5, df / (df + t * t))
    return float(t), float(p)


def linregress(xs, ys):
    """Least-squares line; returns ``(slope, intercept, r)``."""
    x, y = _sample(xs), _sample(ys)
    if x.size != y.size:
        raise ValueError("samples differ in length")
    mx, my = x.mean(), y.mean()
    sxx = np.sum((x - mx) ** 2)
    syy = np.sum((y - my) ** 2)
    sxy = np.sum((x - mx) * (y - my))
    if sxx == 0:
        raise DegenerateStatistic("all x values equal")
    slope = sxy / sxx
    r = sxy / math.sqrt(sxx * syy) if syy > 0 else 0.0
    return float(slope), float(my - slope * mx), float(r)


def _guard(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (DegenerateStatistic, ValueError) as exc:
        return ("undefined", str(exc))


# --------------------------------------------------------------------------
# summary

def _mean_se(v):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else 0.0
    return float(v.mean()), float(se)


@dataclass
class ClassStats:
    problem: str
    mode: str
    trials: int
    solved: int
    graph_mean: float
    graph_se: float
    actual_mean: float
    actual_se: float
    abs_diff: float
    rel_diff: float

    @property
    def rate(self):
        return self.solved / self.trials if self.trials else 0.0


@dataclass
class SummaryStats:
    classes: list
    combined: list
    tests: dict
    regressions: dict
    hybrid_saving: float
    skipped: int
    battery: float

    def rate(self, problem, mode):
        for c in self.classes + self.combined:
            if c.problem == problem and c.mode == mode:
                return c.rate
        raise KeyError((problem, mode))


def _class_stats(problem, mode, recs):
    solved = [r for r in recs if r.solved]
    g = _mean_se([r.graph_cost for r in solved])
    a = _mean_se([r.actual_cost for r in recs])
    return ClassStats(problem, mode, len(recs), len(solved), g[0], g[1], a[0], a[1],
                      float(np.mean([r.abs_diff for r in solved])) if solved else math.nan,
                      float(np.mean([r.rel_diff for r in solved])) if solved else math.nan)


def _paired(records, problem, a, b):
    """Actual costs of problems both modes solved, in environment order."""
    by = {(r.env_seed, r.mode): r for r in records if r.problem == problem}
    seeds = sorted({s for s, m in by if m == a} & {s for s, m in by if m == b})
    both = [s for s in seeds if by[s, a].solved and by[s, b].solved]
    return [by[s, a].actual_cost for s in both], [by[s, b].actual_cost for s in both]


def summarize(records, skipped=0, battery=1.2e6):
    """Solve rates, energy means, hypothesis tests and prediction regressions."""
    records = list(records)
    classes = []
    for problem in PROBLEMS:
        for mode in ASSIGNMENT[problem]:
            recs = [r for r in records if r.problem == problem and r.mode == mode]
            classes.append(_class_stats(problem, mode, recs))
    # every problem for every vehicle; single-medium vehicles fail off-medium ones
    combined = []
    problems = sorted({(r.env_seed, r.problem) for r in records})
    for mode in ("hybrid", "air", "water"):
        recs = []
        for seed, problem in problems:
            hit = [r for r in records if (r.env_seed, r.problem, r.mode) == (seed, problem, mode)]
            if hit:
                recs.append(hit[0])
            else:
                recs.append(TrialRecord(seed, problem, mode, False, "OffMedium", math.nan,
                                        battery, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0))
        combined.append(_class_stats("All", mode, recs))

    tests = {}
    for problem, single in (("AirAir", "air"), ("WaterWater", "water")):
        h = [r for r in records if r.problem == problem and r.mode == "hybrid"]
        s = [r for r in records if r.problem == problem and r.mode == single]
        tests[f"chi2 {problem} hybrid vs {single}"] = _guard(
            chi2_proportions, sum(r.solved for r in h), len(h), sum(r.solved for r in s), len(s))
        xh, xs = _paired(records, problem, "hybrid", single)
        tests[f"F {problem} hybrid vs {single}"] = _guard(f_test, xh, xs)
        tests[f"t {problem} hybrid vs {single}"] = _guard(t_test, xh, xs, equal_var=True)

    regressions = {}
    solved = [r for r in records if r.solved]
    groups = [("all", solved)] + [(f"{p} {m}", [r for r in solved if (r.problem, r.mode) == (p, m)])
                                  for p in PROBLEMS for m in ASSIGNMENT[p]]
    for name, recs in groups:
        ok = [r for r in recs if math.isfinite(r.speed_increase)]
        regressions[f"rel vs length {name}"] = _guard(
            linregress, [r.length for r in recs], [r.rel_diff for r in recs])
        regressions[f"rel vs speed {name}"] = _guard(
            linregress, [r.speed_increase for r in ok], [r.rel_diff for r in ok])
        regressions[f"abs vs length {name}"] = _guard(
            linregress, [r.length for r in recs], [r.abs_diff for r in recs])
        regressions[f"abs vs speed {name}"] = _guard(
            linregress, [r.speed_increase for r in ok], [r.abs_diff for r in ok])

    xh, xa = _paired(records, "AirAir", "hybrid", "air")
    saving = float(np.mean([(a - h) / a for h, a in zip(xh, xa)]) * 100.0) if xh else math.nan
    return SummaryStats(classes, combined, tests, regressions, saving, skipped, battery)


def _fmt(v):
    if isinstance(v, tuple) and v and v[0] == "undefined":
        return f"undefined ({v[1]})"
    return "  ".join(f"{x:.6g}" for x in v)


def report(stats: SummaryStats):
    out = io.StringIO()
    w = out.write
    w("Monte Carlo summary\n\n")
    w(f"battery charged to failed runs: {stats.battery:.6g} J\n")
    w(f"problems skipped for lack of endpoints: {stats.skipped}\n")
    w("records hold one trajectory per attempted mission\n\n")
    w(f"{'problem':<11}{'mode':<8}{'solved':>8}{'rate':>8}{'graph J':>12}{'+-':>10}"
      f"{'actual J':>12}{'+-':>10}{'|%| diff':>10}{'rel %':>10}\n")
    for c in stats.classes + stats.combined:
        w(f"{c.problem:<11}{c.mode:<8}{c.solved:>4}/{c.trials:<3}{c.rate:>8.3f}"
          f"{c.graph_mean:>12.1f}{c.graph_se:>10.1f}{c.actual_mean:>12.1f}{c.actual_se:>10.1f}"
          f"{c.abs_diff:>10.2f}{c.rel_diff:>10.2f}\n")
    w(f"\nhybrid saving on jointly solved air problems: {stats.hybrid_saving:.2f} %\n")
    w("\ntests (statistic  p)\n")
    for k, v in stats.tests.items():
        w(f"  {k:<36}{_fmt(v)}\n")
    w("\nregressions (slope  intercept  r)\n")
    for k, v in stats.regressions.items():
        w(f"  {k:<36}{_fmt(v)}\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# files

_FIELDS = [f.name for f in fields(TrialRecord)]


def write_records(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_FIELDS)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


def read_records(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(TrialRecord(
                env_seed=int(row["env_seed"]), problem=row["problem"], mode=row["mode"],
                solved=row["solved"] == "True", reason=row["reason"],
                replans=int(row["replans"]),
                **{k: float(row[k]) for k in ("graph_cost", "actual_cost", "energy_used", "length",
                                              "graph_length", "mean_speed", "graph_speed",
                                              "duration")}))
    return out


def write_outputs(records, stats: SummaryStats, out_dir):
    """records.csv, run.json, summary.txt, fig7_prediction.csv and fig8_energy.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "records.csv")
    (out / "run.json").write_text(json.dumps(
        {"skipped": stats.skipped, "battery": stats.battery}, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(report(stats))
    with open(out / "fig7_prediction.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["env_seed", "problem", "mode", "length", "speed_increase", "rel_diff",
                    "abs_diff"])
        for r in records:
            if r.solved:
                w.writerow([r.env_seed, r.problem, r.mode, repr(r.length),
                            repr(r.speed_increase), repr(r.rel_diff), repr(r.abs_diff)])
    with open(out / "fig8_energy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["problem", "mode", "trials", "solved", "graph_mean", "graph_se",
                    "actual_mean", "actual_se", "abs_diff", "rel_diff"])
        for c in stats.classes + stats.combined:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(c).values()])


def load_summary(out_dir):
    """Rebuild the summary from the files ``write_outputs`` left in ``out_dir``."""
    out = Path(out_dir)
    meta = json.loads((out / "run.json").read_text())
    records = read_records(out / "records.csv")
    return records, summarize(records, meta["skipped"], meta["battery"])
