"""Small hand-drawn worlds for regression checks.

``two_corridor`` is a flat, all-air maze with two ways from the start room to
the goal room.  The short corridor looks open on the map but is plugged with
rock next to the start.  The long corridor is truly open, yet the map shows a
thin wall across it.  Once the plug is seen, a planner that treats assumed
rock as impassable has nowhere to go; one that only prices it high still
tries the wall and finds it is not there.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .planner import PlannerConfig
from .voxelworld import (ASSUMED_FREE, ASSUMED_OBSTACLE, FREE, OCCUPIED, VoxelGrid,
                         WaterSurface)

DIMS = (26, 21, 5)
START = (3, 2, 2)
GOAL = (22, 16, 2)


@dataclass
class Scenario:
    environment: VoxelGrid
    world: VoxelGrid
    start: tuple
    goal: tuple
    planner: PlannerConfig
    seed: int

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.environment.save(d / "environment.grid")
        self.world.save(d / "map.grid")
        meta = {"start": list(self.start), "goal": list(self.goal), "seed": self.seed,
                "density": self.planner.density, "r_max_edge": self.planner.r_max_edge,
                "k_new": self.planner.k_new}
        (d / "scenario.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = json.loads((d / "scenario.json").read_text())
        pc = PlannerConfig(density=meta["density"], r_max_edge=meta["r_max_edge"],
                           k_new=meta["k_new"])
        return cls(VoxelGrid.load(d / "environment.grid"), VoxelGrid.load(d / "map.grid"),
                   tuple(meta["start"]), tuple(meta["goal"]), pc, meta["seed"])

    def fresh_world(self):
        return self.world.copy()


def two_corridor():
    open_ = np.zeros(DIMS, dtype=bool)
    h = slice(1, 4)
    open_[1:6, 1:6, h] = True        # start room
    open_[6:23, 1:4, h] = True       # short corridor, east
    open_[20:23, 4:14, h] = True     #   then north
    open_[20:25, 14:20, h] = True    # goal room
    open_[1:4, 6:19, h] = True       # long corridor, north
    open_[4:20, 16:19, h] = True     #   then east into the goal room
    truth = open_.copy()
    truth[8:10, 1:4, h] = False      # plug the short corridor
    belief = open_.copy()
    belief[1:4, 12:14, h] = False    # phantom wall across the long one
    water = WaterSurface(-0.25)      # below every center: all air
    env = VoxelGrid(np.where(truth, FREE, OCCUPIED).astype(np.uint8), 1.0, "environment",
                    water, 0, {})
    world = VoxelGrid(np.where(belief, ASSUMED_FREE, ASSUMED_OBSTACLE).astype(np.uint8), 1.0,
                      "map", water, 0, {})
    return Scenario(env, world, START, GOAL, PlannerConfig(density=0.5), seed=3)
