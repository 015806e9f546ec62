"""Layered controller: trajectory generator, positional and attitude control.

Trajectories are built in the planner's world frame (x, y, h).  The
positional and attitude controllers work in the inertial z-down frame of
:mod:`amphiplan.vehicle`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .vehicle import (G, MediumParams, VehicleParams, VehicleState, quat_conjugate,
                      quat_from_two_vectors, quat_multiply, quat_rotate,
                      quat_rotate_inverse)

log = logging.getLogger(__name__)

THRUST_AXIS = np.array([0.0, 0.0, -1.0])
F_EPS = 1e-6
MIN_LIFT = 0.2
TAN_TILT = math.tan(math.radians(45.0))

# Gauss-Legendre nodes on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
_GL_U = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


# --------------------------------------------------------------------------
# gains

def _diag3(v):
    a = np.broadcast_to(np.asarray(v, dtype=float), (3,)).copy()
    if np.any(a <= 0):
        raise ValueError("gain matrices must be positive definite diagonal")
    return a


@dataclass(frozen=True)
class ControllerGains:
    """Diagonals of the position and attitude PD gain matrices for one medium."""

    Kp_pos: np.ndarray
    Kd_pos: np.ndarray
    Kp_att: np.ndarray
    Kd_att: np.ndarray

    def __post_init__(self):
        for name in ("Kp_pos", "Kd_pos", "Kp_att", "Kd_att"):
            object.__setattr__(self, name, _diag3(getattr(self, name)))

    @classmethod
    def air(cls):
        # overdamped attitude loop; its slow pole sits near Kp_att / (2 Kd_att)
        return cls(2.0, 2.5, 12.0, 2.0)

    @classmethod
    def water(cls):
        # attitude damping kept near critical so large tilts settle within 3 s
        return cls(1.2, 3.0, 18.0, 3.0)

    def as_array(self):
        return np.concatenate([self.Kp_pos, self.Kd_pos, self.Kp_att, self.Kd_att])

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("Kp_pos", "Kd_pos", "Kp_att", "Kd_att")}


@dataclass(frozen=True)
class DesiredAttitude:
    q_d: np.ndarray
    w_d: np.ndarray
    U0: float
    psi_d: float = 0.0
    psi_dot_d: float = 0.0


# --------------------------------------------------------------------------
# trajectory generator

def arrival_times(nodes, v_c, t0=0.0):
    """Node times assuming straight-line travel at constant speed ``v_c``."""
    if v_c <= 0:
        raise ValueError("cruise speed must be positive")
    nodes = np.asarray(nodes, dtype=float)
    times = [float(t0)]
    for a, b in zip(nodes[:-1], nodes[1:]):
        d = float(np.linalg.norm(b - a))
        if d == 0.0:
            raise ValueError("consecutive nodes must be distinct")
        times.append(times[-1] + d / v_c)
    return times


def node_velocities(nodes, v_c, v_start=None, prefilter=True):
    """Velocity prescribed at each node.

    Interior nodes get speed ``v_c`` along the incoming leg.  With the
    pre-filter, any component whose sign differs between the incoming and the
    outgoing unit vectors is zeroed (a zero component never counts as a sign
    change).  The first node takes ``v_start`` (rest by default) and the last
    node is at rest.
    """
    nodes = np.asarray(nodes, dtype=float)
    if len(nodes) < 2:
        raise ValueError("need at least two nodes")
    out = [np.zeros(3) if v_start is None else np.asarray(v_start, dtype=float).copy()]
    for i in range(1, len(nodes) - 1):
        inc = nodes[i] - nodes[i - 1]
        outg = nodes[i + 1] - nodes[i]
        n_in = np.linalg.norm(inc)
        n_out = np.linalg.norm(outg)
        if n_in == 0.0 or n_out == 0.0:
            out.append(np.zeros(3))
            continue
        u_in, u_out = inc / n_in, outg / n_out
        v = v_c * u_in
        if prefilter:
            v[u_in * u_out < 0.0] = 0.0
        out.append(v)
    out.append(np.zeros(3))
    return out


@dataclass
class TrajectorySegment:
    """Two 7th-order polynomials per axis joined at ``t1``.

    ``coef[k, axis]`` holds the coefficients in the normalized time
    ``u = (t - t_k) / tau_k``; :attr:`a` and :attr:`b` convert them to the
    ``(t - t_k)^i`` basis.  ``t2 == t1`` marks a single stop-stop polynomial.
    """

    t0: float
    t1: float
    t2: float
    coef: np.ndarray
    x0: np.ndarray
    v0: np.ndarray
    a0: np.ndarray
    x1: np.ndarray
    v1: np.ndarray
    x2: np.ndarray
    converged: bool = True
    arc_length: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def taus(self):
        return np.array([self.t1 - self.t0, self.t2 - self.t1])

    def _unscaled(self, k):
        tau = self.taus[k]
        if tau == 0.0:
            out = np.zeros((3, 8))
            out[:, 0] = self.coef[k, :, 0]
            return out
        return self.coef[k] / tau ** np.arange(8)

    @property
    def a(self):
        return self._unscaled(0)

    @property
    def b(self):
        return self._unscaled(1)

    def residuals(self):
        """Largest violation of the boundary and junction constraints."""
        x, v, acc = eval_spline(self, self.t0)
        r = [x - self.x0, v - self.v0, acc - self.a0]
        xl, vl, al = _eval_piece(self.coef[0], self.taus[0], 1.0)
        r += [xl - self.x1, vl - self.v1]
        if self.t2 > self.t1:
            xr, vr, ar = _eval_piece(self.coef[1], self.taus[1], 0.0)
            r += [xr - self.x1, vr - self.v1, al - ar]
            xe, ve, ae = _eval_piece(self.coef[1], self.taus[1], 1.0)
        else:
            xe, ve, ae = xl, vl, al
        r += [xe - self.x2, ve, ae]
        return float(max(np.max(np.abs(e)) for e in r))


@njit(cache=True)
def _eval_piece(c, tau, u):
    """Position, velocity, acceleration of one normalized polynomial piece."""
    x = np.zeros(3)
    v = np.zeros(3)
    a = np.zeros(3)
    for ax in range(3):
        p = c[ax, 7]
        dp = 7.0 * c[ax, 7]
        ddp = 42.0 * c[ax, 7]
        for i in range(6, -1, -1):
            p = p * u + c[ax, i]
            if i >= 1:
                dp = dp * u + i * c[ax, i]
            if i >= 2:
                ddp = ddp * u + i * (i - 1) * c[ax, i]
        x[ax] = p
        if tau > 0.0:
            v[ax] = dp / tau
            a[ax] = ddp / (tau * tau)
    return x, v, a


@njit(cache=True)
def _eval_segment(coef, t0, t1, t2, t):
    if t <= t0:
        t = t0
    if t < t1 or t2 <= t1:
        tau = t1 - t0
        u = (t - t0) / tau
        if u > 1.0:
            u = 1.0
        x, v, a = _eval_piece(coef[0], tau, u)
        if t >= t1:
            # held at rest past the end of a single-piece segment
            v[:] = 0.0
            a[:] = 0.0
        return x, v, a
    tau = t2 - t1
    u = (t - t1) / tau
    if u >= 1.0:
        x, v, a = _eval_piece(coef[1], tau, 1.0)
        v[:] = 0.0
        a[:] = 0.0
        return x, v, a
    return _eval_piece(coef[1], tau, u)


def eval_spline(seg: TrajectorySegment, t):
    """``(x_d, v_d, a_d)`` at time ``t`` in ``[t0, t2]``."""
    if not seg.t0 - 1e-12 <= t <= seg.t2 + 1e-12:
        raise ValueError(f"t={t} outside [{seg.t0}, {seg.t2}]")
    if t < seg.t1 or seg.t2 <= seg.t1:
        tau = seg.t1 - seg.t0
        return _eval_piece(seg.coef[0], tau, min((t - seg.t0) / tau, 1.0))
    tau = seg.t2 - seg.t1
    return _eval_piece(seg.coef[1], tau, min((t - seg.t1) / tau, 1.0))


def _deriv_row(k, u):
    """Row mapping coefficients to the k-th u-derivative at ``u``."""
    row = np.zeros(8)
    for i in range(k, 8):
        f = 1.0
        for j in range(k):
            f *= i - j
        row[i] = f * u ** (i - k)
    return row


def _constraint_system(tau1, tau2):
    """Constraint matrix on the normalized coefficients ``[c(8), d(8)]``.

    Rows are scaled so every entry is O(1); the right-hand side is returned as
    a function of the boundary data.
    """
    single = tau2 == 0.0
    n = 8 if single else 16
    rows = []

    def pad(r, second=False):
        full = np.zeros(n)
        if second:
            full[8:] = r
        else:
            full[:8] = r
        return full

    rows.append(pad(_deriv_row(0, 0.0)))            # x(t0)
    rows.append(pad(_deriv_row(1, 0.0)))            # v(t0) * tau1
    rows.append(pad(_deriv_row(2, 0.0)))            # a(t0) * tau1^2
    rows.append(pad(_deriv_row(0, 1.0)))            # x(t1)
    rows.append(pad(_deriv_row(1, 1.0)))            # v(t1) * tau1
    if single:
        rows.append(pad(_deriv_row(2, 1.0)))        # a(t1) = 0
    else:
        rows.append(pad(_deriv_row(0, 0.0), True))  # x(t1) on second piece
        rows.append(pad(_deriv_row(1, 0.0), True))  # v(t1) * tau2
        acc = pad(_deriv_row(2, 1.0))
        acc[8:] = -_deriv_row(2, 0.0) * (tau1 / tau2) ** 2
        rows.append(acc)                            # acceleration continuity
        rows.append(pad(_deriv_row(0, 1.0), True))  # x(t2)
        rows.append(pad(_deriv_row(1, 1.0), True))  # v(t2) = 0
        rows.append(pad(_deriv_row(2, 1.0), True))  # a(t2) = 0
    return np.array(rows)


def _rhs(single, tau1, tau2, x0, v0, a0, x1, v1, x2):
    if single:
        return np.array([x0, v0 * tau1, a0 * tau1 ** 2, x1, v1 * tau1, 0.0])
    return np.array([x0, v0 * tau1, a0 * tau1 ** 2, x1, v1 * tau1, x1, v1 * tau2,
                     0.0, x2, 0.0, 0.0])


def _arc_terms(c, taus, single):
    """Arc length, gradient and Hessian with respect to the coefficients."""
    G1 = np.array([_deriv_row(1, u) for u in _GL_U])  # (20, 8)
    n = c.size
    J = 0.0
    g = np.zeros(n)
    H = np.zeros((n, n))
    pieces = [(0, taus[0])] if single else [(0, taus[0]), (8, taus[1])]
    for off, tau in pieces:
        s = G1 @ c[off:off + 8] / tau
        r = np.sqrt(1.0 + s * s)
        J += tau * float(_GL_W @ r)
        g[off:off + 8] += G1.T @ (_GL_W * s / r)
        H[off:off + 8, off:off + 8] += (G1.T * (_GL_W / (tau * r ** 3))) @ G1
    return J, g, H


def arc_length_of(coef_axis, taus, single):
    return _arc_terms(coef_axis, taus, single)[0]


def _minimize_arc(cp, N, taus, single, tol=1e-8, max_iter=60):
    z = np.zeros(N.shape[1])
    c = cp.copy()
    J, g, H = _arc_terms(c, taus, single)
    for _ in range(max_iter):
        gz = N.T @ g
        if np.linalg.norm(gz) < tol:
            return c, J, True
        Hz = N.T @ H @ N
        try:
            dz = -np.linalg.solve(Hz, gz)
        except np.linalg.LinAlgError:
            dz = -gz
        step = 1.0
        while step > 1e-12:
            zn = z + step * dz
            cn = cp + N @ zn
            Jn = _arc_terms(cn, taus, single)[0]
            if Jn <= J + 1e-4 * step * float(gz @ dz):
                break
            step *= 0.5
        else:
            break
        z = zn
        c = cn
        J, g, H = _arc_terms(c, taus, single)
    return c, J, bool(np.linalg.norm(N.T @ g) < tol)


def build_spline(state0, n1, n2, v_c, t0=0.0, n0=None, prefilter=True, duration=None):
    """Minimum arc-length spline from ``state0`` through ``n1`` to rest at ``n2``.

    ``state0`` is ``(x0, v0, a0)``.  Node times come from straight-line travel
    at ``v_c`` measured from ``n0`` (defaults to ``x0``).  ``n2 == n1`` gives a
    single stop-stop polynomial ending at rest at ``n1``; its length in time
    can be forced with ``duration``.
    """
    x0, v0, a0 = (np.asarray(s, dtype=float) for s in state0)
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    n0 = x0 if n0 is None else np.asarray(n0, dtype=float)
    single = bool(np.all(n1 == n2))
    if single:
        t1 = t0 + duration if duration is not None else arrival_times([n0, n1], v_c, t0)[1]
        t2 = t1
        v1 = np.zeros(3)
    else:
        _, t1, t2 = arrival_times([n0, n1, n2], v_c, t0)
        v1 = node_velocities([n0, n1, n2], v_c, prefilter=prefilter)[1]
    tau1, tau2 = t1 - t0, t2 - t1
    A = _constraint_system(tau1, tau2)
    _, sv, Vt = np.linalg.svd(A)
    rank = int(np.sum(sv > sv[0] * 1e-12))
    N = Vt[rank:].T
    Apinv = np.linalg.pinv(A)
    coef = np.zeros((2, 3, 8))
    arc = np.zeros(3)
    ok = True
    for ax in range(3):
        rhs = _rhs(single, tau1, tau2, x0[ax], v0[ax], a0[ax], n1[ax], v1[ax], n2[ax])
        cp = Apinv @ rhs
        c, J, conv = _minimize_arc(cp, N, (tau1, tau2), single)
        if not conv:
            ok = False
            c = cp
            J = _arc_terms(cp, (tau1, tau2), single)[0]
        arc[ax] = J
        coef[0, ax] = c[:8]
        if single:
            coef[1, ax, 0] = n1[ax]
        else:
            coef[1, ax] = c[8:]
    if not ok:
        log.warning("arc-length minimization did not converge; using minimum-norm solution")
    return TrajectorySegment(t0=float(t0), t1=float(t1), t2=float(t2), coef=coef,
                             x0=x0, v0=v0, a0=a0, x1=n1, v1=v1, x2=n2,
                             converged=ok, arc_length=arc)


def min_norm_arc_length(seg: TrajectorySegment):
    """Per-axis arc length of the minimum-norm feasible coefficients."""
    tau1, tau2 = seg.taus
    single = tau2 == 0.0
    A = _constraint_system(tau1, tau2)
    Apinv = np.linalg.pinv(A)
    out = np.zeros(3)
    for ax in range(3):
        rhs = _rhs(single, tau1, tau2, seg.x0[ax], seg.v0[ax], seg.a0[ax], seg.x1[ax],
                   seg.v1[ax], seg.x2[ax])
        out[ax] = _arc_terms(Apinv @ rhs, (tau1, tau2), single)[0]
    return out


def export_csv(seg: TrajectorySegment, path, dt=0.01):
    """Sample the reference at ``dt`` and write ``t, x, y, h, vx, ..., ah``."""
    ts = np.arange(seg.t0, seg.t2 + 0.5 * dt, dt)
    ts[-1] = min(ts[-1], seg.t2)
    rows = []
    for t in ts:
        x, v, a = eval_spline(seg, t)
        rows.append([t, *x, *v, *a])
    header = "t,x,y,h,vx,vy,vh,ax,ay,ah"
    np.savetxt(path, np.array(rows), delimiter=",", header=header, comments="", fmt="%.9g")


# --------------------------------------------------------------------------
# positional and attitude control (inertial z-down frame)

@njit(cache=True)
def _positional(x, v, q, xd, vd, ad, kp, kd, m, b, rho, cda, use_drag, mem, dt):
    """Desired attitude, body rates and collective thrust.

    ``mem`` = [F_prev(3), has_prev, q_prev(4)] is updated in place.
    """
    rdd = ad + kp * (xd - x) + kd * (vd - v)
    F = m * rdd
    F[2] -= b * m * G
    if use_drag:
        vb = quat_rotate_inverse(q, v)
        fdb = np.empty(3)
        for i in range(3):
            fdb[i] = -0.5 * rho * cda[i] * abs(vb[i]) * vb[i]
        F -= quat_rotate(q, fdb)
    # keep the demanded thrust upward and inside the tilt cone
    up = max(-F[2], MIN_LIFT * b * m * G)
    F[2] = -up
    hor = math.sqrt(F[0] * F[0] + F[1] * F[1])
    if hor > TAN_TILT * up:
        F[0] *= TAN_TILT * up / hor
        F[1] *= TAN_TILT * up / hor
    nF = math.sqrt(F[0] * F[0] + F[1] * F[1] + F[2] * F[2])
    wd = np.zeros(3)
    if nF < 1e-6:
        qd = mem[4:8].copy()
        mem[3] = 0.0
        return qd, wd, 0.0
    fI = F / nF
    tb = np.array([0.0, 0.0, -1.0])
    qd = quat_from_two_vectors(tb, fI)
    if mem[3] > 0.5:
        Fdot = (F - mem[0:3]) / dt
        fdot = Fdot / nF - F * (F[0] * Fdot[0] + F[1] * Fdot[1] + F[2] * Fdot[2]) / nF ** 3
        wI = np.empty(3)
        wI[0] = fI[1] * fdot[2] - fI[2] * fdot[1]
        wI[1] = fI[2] * fdot[0] - fI[0] * fdot[2]
        wI[2] = fI[0] * fdot[1] - fI[1] * fdot[0]
        wd = quat_rotate_inverse(qd, wI)
    mem[0:3] = F
    mem[3] = 1.0
    mem[4:8] = qd
    return qd, wd, nF


@njit(cache=True)
def _attitude(q, w, qd, wd, kp, kd, J, dw):
    qe = quat_multiply(quat_conjugate(qd), q)
    if qe[0] < 0.0:
        qe = -qe
    U = -kp * qe[1:4] - kd * (w - wd)
    U[2] = _yaw_moment(q, w, qd, U[0], U[1], kp[2], kd[2], J, dw, U[2])
    return U, qe


@njit(cache=True)
def _yaw_moment(q, w, qd, U1, U2, kp, kd, J, dw, fallback):
    """Yaw moment that holds the twist of ``q`` about the vertical.

    The z part of the error quaternion lets tilt errors leak into heading,
    and roll/pitch accelerations drive the twist too, so the moment is
    solved for the twist acceleration a PD law on the twist asks for,
    given roll and pitch moments ``U1, U2``.
    """
    n = q[0] * q[0] + q[3] * q[3]
    if n < 1e-6:
        return fallback
    tw = math.atan2(q[3], q[0]) - math.atan2(qd[3], qd[0])
    e3 = math.sin(tw) if math.cos(tw) >= 0.0 else -math.sin(tw)
    wdot = np.empty(3)
    wdot[0] = (U1 - (J[2] - J[1]) * w[1] * w[2] - dw[0] * w[0]) / J[0]
    wdot[1] = (U2 - (J[0] - J[2]) * w[2] * w[0] - dw[1] * w[1]) / J[1]
    wdot[2] = 0.0
    z = np.zeros(4)
    z[1:4] = w
    qdot = 0.5 * quat_multiply(q, z)
    qddot = 0.5 * quat_multiply(qdot, z)
    z[1:4] = wdot
    qddot += 0.5 * quat_multiply(q, z)
    num = q[0] * qdot[3] - q[3] * qdot[0]
    ndot = 2.0 * (q[0] * qdot[0] + q[3] * qdot[3])
    rate = 2.0 * num / n
    # twist acceleration with zero yaw acceleration; its gain on w_dot_z is 1
    acc0 = 2.0 * ((q[0] * qddot[3] - q[3] * qddot[0]) / n - num * ndot / (n * n))
    want = (-kp * e3 - kd * rate) / J[2]
    return J[2] * (want - acc0) + (J[1] - J[0]) * w[0] * w[1] + dw[2] * w[2]


class PositionController:
    """Air/water positional controller with its thrust-derivative memory.

    One instance per simulated vehicle; ``reset`` forgets the previous thrust
    vector so the next call reports zero desired body rates.
    """

    def __init__(self, vp: VehicleParams, dt: float):
        self.vp = vp
        self.dt = dt
        self.mem = np.zeros(8)
        self.mem[4] = 1.0

    def reset(self):
        self.mem[0:4] = 0.0

    def __call__(self, s: VehicleState, des, gains: ControllerGains,
                 med: MediumParams | None = None) -> DesiredAttitude:
        xd, vd, ad = (np.asarray(d, dtype=float) for d in des)
        water = med is not None and med.b < 1.0
        b = med.b if water else 1.0
        rho = med.rho if water else 0.0
        cda = np.asarray(med.CDA if water else (0.0, 0.0, 0.0), dtype=float)
        qd, wd, U0 = _positional(s.x, s.v, s.q, xd, vd, ad, gains.Kp_pos, gains.Kd_pos,
                                 self.vp.m, b, rho, cda, water, self.mem, self.dt)
        return DesiredAttitude(q_d=qd, w_d=wd, U0=float(U0))


def positional_air(s: VehicleState, des, gains: ControllerGains, vp: VehicleParams,
                   controller: PositionController | None = None, dt: float = 0.005):
    """Desired attitude in air from ``des = (x_d, v_d, a_d)`` (inertial frame)."""
    ctl = controller or PositionController(vp, dt)
    return ctl(s, des, gains, None)


def positional_water(s: VehicleState, des, gains: ControllerGains, med: MediumParams,
                     vp: VehicleParams, controller: PositionController | None = None,
                     dt: float = 0.005):
    """Desired attitude under water: buoyancy-reduced gravity plus body drag."""
    ctl = controller or PositionController(vp, dt)
    return ctl(s, des, gains, med)


def attitude(s: VehicleState, des: DesiredAttitude, gains: ControllerGains,
             med: MediumParams | None = None, vp: VehicleParams | None = None):
    """Body moments ``-Kp vec(q_e) - Kd (w - w_d)`` for roll and pitch.

    The yaw moment holds the twist about the vertical instead; see
    :func:`_yaw_moment`.
    """
    J = (vp or VehicleParams()).as_array()[:3]
    dw = np.asarray((med or MediumParams.air()).D_w, dtype=float)
    U, _ = _attitude(s.q, s.w, des.q_d, des.w_d, gains.Kp_att, gains.Kd_att, J, dw)
    return U


def error_quaternion(q_d, q_m):
    qe = quat_multiply(quat_conjugate(np.asarray(q_d, float)), np.asarray(q_m, float))
    return -qe if qe[0] < 0 else qe
