"""Closed-loop execution of a trajectory segment under the full control stack.

The loop body (reference evaluation, positional controller, attitude
controller, rotor allocation, power, RK4 step) runs inside one jitted kernel;
:class:`Executor` is the Python face of it.  The medium is chosen every step
from the vehicle height, so a segment crossing the water surface switches
dynamics, controller and gains on the step where the height crosses the level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .control import (ControllerGains, TrajectorySegment, _attitude, _eval_segment, _positional,
                      _yaw_moment)
from .vehicle import (MediumParams, NumericFailure, VehicleParams, VehicleState,
                      _body_wrench, _derivative, _keep_yaw, _mix, _power, _rk4)

DT = 0.005
_NO_GRID = np.zeros((1, 1, 1), dtype=np.uint8)

# kernel status codes
DONE, SETTLED, TIMEOUT, TRACKING, NONFINITE, COLLISION = 0, 1, 2, 3, 4, 5
STATUS_NAMES = {DONE: "done", SETTLED: "settled", TIMEOUT: "timeout",
                TRACKING: "tracking-error", NONFINITE: "non-finite", COLLISION: "collision"}

TRACE_COLUMNS = ("t", "x", "y", "h", "vx", "vy", "vh", "ax", "ay", "ah",
                 "q0", "q1", "q2", "q3", "p", "q", "r",
                 "Omega1", "Omega2", "Omega3", "Omega4", "P", "E", "water")


@njit(cache=True)
def _run(y, t_start, coef, t0, t1, t2, vp, med_air, med_water, g_air, g_water,
         level, force_medium, dt, t_stop, settle, target, tol, speed_tol, hold,
         t_max, max_err, mem, trace, record, occ, res):
    """Advance ``y`` from ``t_start``.

    Without ``settle`` the run ends at ``t_stop``.  With ``settle`` it ends once
    the vehicle has stayed inside the per-axis corridor ``|x - target| <= tol``
    (and below ``speed_tol``) for ``hold`` seconds after the reference has come
    to rest; ``t_in`` and ``E_in`` report when the corridor was last entered.
    A nonempty ``occ`` grid stops the run when the vehicle enters an occupied
    voxel.
    """
    check = occ.shape[0] > 1
    n = 0
    k = 0
    t = t_start
    status = DONE
    t_in = -1.0
    E_in = 0.0
    last_med = -1
    while True:
        t = t_start + k * dt
        if not settle and t >= t_stop - 1e-9:
            status = DONE
            break
        pos = np.array([y[0], -y[1], -y[2]])
        if check:
            i = int(math.floor(pos[0] / res + 0.5))
            j = int(math.floor(pos[1] / res + 0.5))
            l = int(math.floor(pos[2] / res + 0.5))
            if (i < 0 or j < 0 or l < 0 or i >= occ.shape[0] or j >= occ.shape[1]
                    or l >= occ.shape[2] or occ[i, j, l] != 0):
                status = COLLISION
                break
        if settle:
            inside = True
            for i in range(3):
                if abs(pos[i] - target[i]) > tol[i]:
                    inside = False
            if inside and speed_tol < 1e30:
                sp = math.sqrt(y[3] * y[3] + y[4] * y[4] + y[5] * y[5])
                if sp > speed_tol:
                    inside = False
            if inside:
                if t_in < 0.0:
                    t_in = t
                    E_in = y[13]
                if t >= t2 and t - t_in >= hold - 1e-9:
                    status = SETTLED
                    break
            else:
                t_in = -1.0
        if t >= t_max - 1e-9:
            status = TIMEOUT
            break
        if force_medium >= 0:
            water = force_medium == 1
        else:
            water = pos[2] < level
        if water:
            med = med_water
            g = g_water
        else:
            med = med_air
            g = g_air
        wm = 1 if water else 0
        if last_med >= 0 and wm != last_med:
            mem[3] = 0.0
        last_med = wm
        xw, vw, aw = _eval_segment(coef, t0, t1, t2, t)
        xd = np.array([xw[0], -xw[1], -xw[2]])
        vd = np.array([vw[0], -vw[1], -vw[2]])
        ad = np.array([aw[0], -aw[1], -aw[2]])
        err = math.sqrt((xd[0] - y[0]) ** 2 + (xd[1] - y[1]) ** 2 + (xd[2] - y[2]) ** 2)
        if err > max_err:
            status = TRACKING
            break
        qd, wd, U0 = _positional(y[0:3], y[3:6], y[6:10], xd, vd, ad, g[0:3], g[3:6],
                                 vp[3], med[1], med[0], med[2:5], water, mem, dt)
        U123, qe = _attitude(y[6:10], y[10:13], qd, wd, g[6:9], g[9:12], vp[0:3], med[5:8])
        U = np.empty(4)
        U[0] = U0
        U[1:4] = U123
        U3_level = _yaw_moment(y[6:10], y[10:13], qd, 0.0, 0.0, g[8], g[11], vp[0:3],
                               med[5:8], U123[2])
        om, sat = _mix(_keep_yaw(U, U3_level, med, vp), med, vp)
        Uact = _body_wrench(om, med, vp)
        P = _power(om, med, vp)
        if record:
            dy = _derivative(y, Uact, P, med, vp)
            row = trace[n]
            row[0] = t
            row[1] = y[0]
            row[2] = -y[1]
            row[3] = -y[2]
            row[4] = y[3]
            row[5] = -y[4]
            row[6] = -y[5]
            row[7] = dy[3]
            row[8] = -dy[4]
            row[9] = -dy[5]
            row[10:14] = y[6:10]
            row[14:17] = y[10:13]
            row[17:21] = om
            row[21] = P
            row[22] = y[13]
            row[23] = wm
            n += 1
        y = _rk4(y, Uact, P, med, vp, dt)
        finite = True
        for i in range(14):
            if not math.isfinite(y[i]):
                finite = False
        if not finite:
            status = NONFINITE
            k += 1
            break
        k += 1
    t = t_start + k * dt
    return y, t, status, n, t_in, E_in


@dataclass
class SegmentResult:
    state: VehicleState
    status: str
    trace: np.ndarray
    t_settle: float = math.nan
    E_settle: float = math.nan

    @property
    def ok(self):
        return self.status in ("done", "settled")


@dataclass
class Executor:
    """Runs trajectory segments for one vehicle, keeping controller memory."""

    vp: VehicleParams = field(default_factory=VehicleParams)
    air: MediumParams = field(default_factory=MediumParams.air)
    water: MediumParams = field(default_factory=MediumParams.water)
    gains_air: ControllerGains = field(default_factory=ControllerGains.air)
    gains_water: ControllerGains = field(default_factory=ControllerGains.water)
    water_level: float = -math.inf
    dt: float = DT
    max_tracking_error: float = 3.0
    force_medium: int = -1
    obstacles: np.ndarray | None = None
    resolution: float = 1.0

    def __post_init__(self):
        self._vp = self.vp.as_array()
        self._air = self.air.as_array()
        self._water = self.water.as_array()
        self._ga = self.gains_air.as_array()
        self._gw = self.gains_water.as_array()
        self.mem = np.zeros(8)
        self.mem[4] = 1.0

    def reset_controller(self):
        self.mem[:] = 0.0
        self.mem[4] = 1.0

    def run(self, state: VehicleState, seg: TrajectorySegment, t_stop=None, settle=False,
            target=None, tol=None, speed_tol=math.inf, hold=0.0, t_max=None,
            record=True) -> SegmentResult:
        t_start = state.t
        if t_stop is None:
            t_stop = seg.t2
        if t_max is None:
            t_max = max(t_stop, seg.t2) + 1.0
        target = np.asarray(seg.x2 if target is None else target, dtype=float)
        tol = np.full(3, np.inf) if tol is None else np.asarray(tol, dtype=float)
        horizon = (t_max if settle else t_stop) - t_start
        n_max = max(int(math.ceil(horizon / self.dt)) + 2, 1) if record else 1
        trace = np.zeros((n_max, len(TRACE_COLUMNS)))
        occ = self.obstacles if self.obstacles is not None else _NO_GRID
        y, t, status, n, t_in, E_in = _run(
            state.as_array(), t_start, seg.coef, seg.t0, seg.t1, seg.t2, self._vp,
            self._air, self._water, self._ga, self._gw, self.water_level,
            self.force_medium, self.dt, t_stop, settle, target, tol,
            speed_tol if math.isfinite(speed_tol) else 1e300, hold, t_max,
            self.max_tracking_error, self.mem, trace, record, occ, self.resolution)
        name = STATUS_NAMES[status]
        if status == NONFINITE:
            raise NumericFailure(f"state became non-finite near t={t:.3f}")
        res = SegmentResult(VehicleState.from_array(y, t), name, trace[:n])
        if settle and status == SETTLED:
            res.t_settle = t_in
            res.E_settle = E_in
        return res



@njit(cache=True)
def _attitude_run(y, qd, gains, med, vp, dt, n):
    wd = np.zeros(3)
    out = np.empty((n + 1, 7))
    for k in range(n + 1):
        U123, qe = _attitude(y[6:10], y[10:13], qd, wd, gains[6:9], gains[9:12], vp[0:3], med[5:8])
        out[k, 0] = k * dt
        out[k, 1:4] = qe[1:4]
        out[k, 4:7] = y[10:13]
        if k == n:
            break
        U = np.zeros(4)
        U[1:4] = U123
        y = _rk4(y, U, 0.0, med, vp, dt)
    return out


def regulate_attitude(q0, w0, gains: ControllerGains, med: MediumParams,
                      vp: VehicleParams | None = None, q_d=(1.0, 0.0, 0.0, 0.0),
                      t_end=5.0, dt=DT):
    """Attitude loop alone, moments applied directly (no rotor limits).

    Returns rows of ``(t, vec(q_e), w_e)``.
    """
    vp = vp or VehicleParams()
    y = np.zeros(14)
    y[6:10] = np.asarray(q0, dtype=float)
    y[10:13] = np.asarray(w0, dtype=float)
    n = int(round(t_end / dt))
    return _attitude_run(y, np.asarray(q_d, dtype=float), gains.as_array(),
                         med.as_array(), vp.as_array(), dt, n)
