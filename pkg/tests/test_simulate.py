import math

import numpy as np
import pytest

from amphiplan.control import ControllerGains, build_spline
from amphiplan.costtable import simulate_stop_stop
from amphiplan.simulate import TRACE_COLUMNS, Executor, regulate_attitude
from amphiplan.vehicle import MediumParams, VehicleState, yaw_angle

Z3 = np.zeros(3)
COL = {c: i for i, c in enumerate(TRACE_COLUMNS)}


def test_trace_layout():
    assert TRACE_COLUMNS[:4] == ("t", "x", "y", "h")
    assert len(TRACE_COLUMNS) == 24


def test_done_run_stops_at_requested_time():
    seg = build_spline((Z3, Z3, Z3), (1.0, 0, 0), (2.0, 0, 0), 1.0)
    r = Executor(force_medium=0).run(VehicleState(), seg, t_stop=seg.t1)
    assert r.status == "done" and r.ok
    assert r.state.t == pytest.approx(seg.t1, abs=0.005)
    assert len(r.trace) == round(seg.t1 / 0.005)


def test_energy_is_zero_order_hold_sum_of_power():
    seg = build_spline((Z3, Z3, Z3), (2.0, 1.0, -1.0), (2.0, 1.0, -1.0), 1.0)
    ex = Executor(force_medium=1)
    r = ex.run(VehicleState(), seg, settle=True, tol=np.full(3, 0.04), hold=1.0, t_max=60)
    tr = r.trace
    assert r.status == "settled"
    assert np.all(np.diff(tr[:, COL["E"]]) >= 0)
    assert r.state.E == pytest.approx(np.sum(tr[:, COL["P"]]) * ex.dt, rel=1e-12)


def test_world_frame_in_trace():
    seg = build_spline((Z3, Z3, Z3), (0.0, 0, 1.0), (0.0, 0, 1.0), 1.0)
    r = Executor(force_medium=0).run(VehicleState(), seg, settle=True, tol=np.full(3, 0.02),
                                     hold=1.0, t_max=30)
    assert r.trace[-1, COL["h"]] == pytest.approx(1.0, abs=0.02)


def test_obstacle_grid_stops_run():
    occ = np.zeros((4, 4, 4), dtype=np.uint8)
    occ[2, :, :] = 1
    seg = build_spline((Z3 + 1, Z3, Z3), (3.0, 1, 1), (3.0, 1, 1), 1.0)
    r = Executor(force_medium=0, obstacles=occ).run(
        VehicleState(x=np.array([1.0, -1.0, -1.0])), seg, t_stop=seg.t1)
    assert r.status == "collision" and not r.ok
    assert abs(r.trace[-1, COL["x"]] - 1.5) < 0.1


def test_tracking_loss_reported():
    seg = build_spline((Z3, Z3, Z3), (8.0, 0, 0), (8.0, 0, 0), 20.0)
    r = Executor(force_medium=1, max_tracking_error=0.5).run(VehicleState(), seg, t_stop=seg.t1)
    assert r.status == "tracking-error" and not r.ok


@pytest.mark.parametrize("medium", ["air", "water"])
def test_stop_stop_keeps_yaw_at_zero(medium):
    for disp in [(1, 1, 0), (1, 1, 1), (1, 2, 0), (3, 2, 1), (1, 4, -2), (0, 5, 3)]:
        _, _, tr = simulate_stop_stop(disp, medium, record=True)
        yaw = np.array([yaw_angle(q) for q in tr[:, COL["q0"]:COL["q3"] + 1]])
        assert np.max(np.abs(yaw)) < 1e-3


def test_attitude_regulation_rows():
    out = regulate_attitude([math.cos(0.3), math.sin(0.3), 0, 0], Z3, ControllerGains.air(),
                            MediumParams.air(), t_end=0.1)
    assert out.shape == (21, 7)
    assert out[0, 1] == pytest.approx(math.sin(0.3))
