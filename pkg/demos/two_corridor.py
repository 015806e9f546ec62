"""
Pricing assumed rock
====================

The map a mission starts from is wrong in two places. The short corridor
looks open but is plugged next to the start. The long corridor is open, yet
the map shows a thin wall across it. This demo flies the same mission twice,
once treating assumed rock as impassable and once only pricing it high.
"""
from dataclasses import replace

from amphiplan.costtable import cached_tables
from amphiplan.mission import MissionConfig, run_mission
from amphiplan.scenarios import two_corridor

tables = cached_tables(".amphiplan/tables")   # built on first use, about a minute
sc = two_corridor()

for cost in ("infinite", "c_large"):
    cfg = MissionConfig(planner=replace(sc.planner, assumed_cost=cost), seed=sc.seed)
    res = run_mission(sc.environment, sc.fresh_world(), sc.start, sc.goal, cfg, tables)
    print(f"{cost:9s} -> {res.reason.value:12s} replans {res.replans}  "
          f"flown {res.length:5.1f} m  energy {res.actual_cost:8.0f} J")

# With impassable pricing, the phantom wall seals the long corridor once the
# plug in the short one is seen, so the planner gives up. With C_large the
# wall is merely expensive. The planner goes to look, finds it is not there
# and reaches the goal.
