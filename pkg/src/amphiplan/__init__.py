"""Energy-aware planning for an amphibious quadrotor in flooded caves.

Modules, bottom up: :mod:`vehicle` (dynamics and power), :mod:`control`
(spline generator and cascaded controllers), :mod:`simulate` (closed-loop
execution), :mod:`costtable` (stop-stop energy tables), :mod:`voxelworld`
(grids, caves, sensing), :mod:`planner` (roadmap and D* Lite),
:mod:`mission` (the online loop) and :mod:`bench` (Monte Carlo statistics).
"""

__version__ = "0.1.0"
