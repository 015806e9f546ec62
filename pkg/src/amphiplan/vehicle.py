"""Rigid-body model of the amphibious quadrotor.

Frames
------
The inertial frame used by the dynamics is x-forward, y-right, z-down, so
gravity is ``(0, 0, +9.81)``.  The planner's world frame is (x, y, h) with h
pointing up; :func:`world_to_inertial` maps between the two (a 180 degree
rotation about x, so it is its own inverse).

Quaternions are scalar-first Hamilton quaternions.  ``q`` maps body vectors
into the inertial frame: ``v_I = q (x) [0, v_B] (x) q*``, and the kinematics
are ``q_dot = 0.5 q (x) [0, w]`` with ``w`` the body rates.

Rotor layout (body frame, X configuration)::

        1 (front-left)   2 (front-right)
                    \\   /
                     \\ /
                     / \\
                    /   \\
        4 (rear-left)    3 (rear-right)

Rotors 1 and 3 produce a positive body-z reaction torque, 2 and 4 negative.

State vectors handed to the jitted kernels are flat float64 arrays::

    y = [x(3), v(3), q(4), w(3), E]
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from numba import njit

G = 9.81
GRAVITY = np.array([0.0, 0.0, G])
SQRT2 = math.sqrt(2.0)


class NumericFailure(RuntimeError):
    """Raised when the integrated state stops being finite."""


def world_to_inertial(p):
    p = np.asarray(p, dtype=float)
    return np.array([p[0], -p[1], -p[2]])


inertial_to_world = world_to_inertial


# --------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class VehicleParams:
    Jxx: float = 0.0165
    Jyy: float = 0.0324
    Jzz: float = 0.0385
    m: float = 3.865
    L: float = 0.200
    R: float = 0.1905
    C_T: float = 0.0103
    C_Q: float = 0.00118
    battery_capacity: float = 1.2e6

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"VehicleParams.{f.name} must be positive")

    @property
    def J(self):
        return np.array([self.Jxx, self.Jyy, self.Jzz])

    def as_array(self):
        return np.array([self.Jxx, self.Jyy, self.Jzz, self.m, self.L, self.R,
                         self.C_T, self.C_Q])


@dataclass(frozen=True)
class MediumParams:
    """Fluid-dependent constants.

    ``CDA`` are the flat-plate areas (f1, f2, f3), ``D_w`` the diagonal of the
    attitude drag matrix, ``eta_m`` the drivetrain efficiency of the power
    model and ``P_idle`` the electronics draw.
    """

    name: str
    rho: float
    b: float
    CDA: tuple = (0.01, 0.01, 0.03)
    D_w: tuple = (0.001, 0.001, 0.001)
    eta_m: float = 0.55
    P_idle: float = 15.0
    Omega_max: float = 1200.0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("buoyancy factor must lie in [0, 1]")
        if not 0.0 < self.eta_m <= 1.0:
            raise ValueError("eta_m must lie in (0, 1]")
        if self.P_idle < 0 or self.Omega_max <= 0:
            raise ValueError("P_idle must be >= 0 and Omega_max > 0")
        object.__setattr__(self, "CDA", tuple(float(c) for c in self.CDA))
        object.__setattr__(self, "D_w", tuple(float(c) for c in self.D_w))

    @classmethod
    def air(cls, **kw):
        base = dict(name="air", rho=1.225, b=1.0, D_w=(0.001,) * 3, eta_m=0.55,
                    P_idle=15.0, Omega_max=1200.0)
        base.update(kw)
        return cls(**base)

    @classmethod
    def water(cls, **kw):
        base = dict(name="water", rho=1000.0, b=0.75, D_w=(0.2,) * 3, eta_m=0.70,
                    P_idle=15.0, Omega_max=400.0)
        base.update(kw)
        return cls(**base)

    def as_array(self):
        return np.array([self.rho, self.b, *self.CDA, *self.D_w, self.eta_m,
                         self.P_idle, self.Omega_max])


# indices into MediumParams.as_array()
_RHO, _B, _CDA, _DW, _ETA, _PIDLE, _OMAX = 0, 1, 2, 5, 8, 9, 10


@dataclass
class VehicleState:
    """Inertial position/velocity, attitude, body rates, consumed energy."""

    x: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    E: float = 0.0
    t: float = 0.0

    def as_array(self):
        return np.concatenate([self.x, self.v, self.q, self.w, [self.E]]).astype(float)

    @classmethod
    def from_array(cls, y, t=0.0):
        y = np.asarray(y, dtype=float)
        return cls(x=y[0:3].copy(), v=y[3:6].copy(), q=y[6:10].copy(),
                   w=y[10:13].copy(), E=float(y[13]), t=float(t))


@dataclass(frozen=True)
class RotorSpeeds:
    Omega: np.ndarray
    saturated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "Omega", np.asarray(self.Omega, dtype=float))


# --------------------------------------------------------------------------
# quaternion algebra

@njit(cache=True)
def quat_multiply(a, b):
    """Hamilton product ``a (x) b``."""
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=True)
def quat_conjugate(a):
    return np.array([a[0], -a[1], -a[2], -a[3]])


@njit(cache=True)
def quat_rotate(q, v):
    """Body -> inertial: ``q (x) [0, v] (x) q*``."""
    # t = 2 qv x v ; v' = v + q0 t + qv x t
    qx, qy, qz = q[1], q[2], q[3]
    tx = 2.0 * (qy * v[2] - qz * v[1])
    ty = 2.0 * (qz * v[0] - qx * v[2])
    tz = 2.0 * (qx * v[1] - qy * v[0])
    out = np.empty(3)
    out[0] = v[0] + q[0] * tx + (qy * tz - qz * ty)
    out[1] = v[1] + q[0] * ty + (qz * tx - qx * tz)
    out[2] = v[2] + q[0] * tz + (qx * ty - qy * tx)
    return out


@njit(cache=True)
def quat_rotate_inverse(q, v):
    """Inertial -> body: ``q* (x) [0, v] (x) q``."""
    return quat_rotate(quat_conjugate(q), v)


@njit(cache=True)
def skew(w):
    out = np.zeros((3, 3))
    out[0, 1] = -w[2]
    out[0, 2] = w[1]
    out[1, 0] = w[2]
    out[1, 2] = -w[0]
    out[2, 0] = -w[1]
    out[2, 1] = w[0]
    return out


@njit(cache=True)
def quat_from_two_vectors(fB, fI):
    """Shortest rotation taking unit vector ``fB`` onto unit vector ``fI``.

    ``[1 + fB.fI, fB x fI] / sqrt(2 (1 + fB.fI))``; the antiparallel case
    falls back to a half turn about body x.
    """
    c = fB[0] * fI[0] + fB[1] * fI[1] + fB[2] * fI[2]
    out = np.empty(4)
    if 1.0 + c < 1e-12:
        out[0] = 0.0
        out[1] = 1.0
        out[2] = 0.0
        out[3] = 0.0
        return out
    s = math.sqrt(2.0 * (1.0 + c))
    out[0] = (1.0 + c) / s
    out[1] = (fB[1] * fI[2] - fB[2] * fI[1]) / s
    out[2] = (fB[2] * fI[0] - fB[0] * fI[2]) / s
    out[3] = (fB[0] * fI[1] - fB[1] * fI[0]) / s
    return out


@njit(cache=True)
def quat_normalize(q):
    return q / math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


def yaw_angle(q):
    """Twist of ``q`` about the inertial vertical axis (rad).

    This is the swing-twist decomposition angle, so a pure tilt reads as zero
    yaw, unlike the ZYX Euler heading.
    """
    q0, _, _, q3 = q
    if q0 < 0.0:
        q0, q3 = -q0, -q3
    return 2.0 * math.atan2(q3, q0)


# --------------------------------------------------------------------------
# rotors

@njit(cache=True)
def _rotor_gains(med, vp):
    R = vp[5]
    A = math.pi * R * R
    K_T = vp[6] * med[_RHO] * A * R * R
    K_Q = vp[7] * med[_RHO] * A * R * R * R
    return K_T, K_Q


@njit(cache=True)
def _mix(U, med, vp):
    K_T, K_Q = _rotor_gains(med, vp)
    k = vp[4] / SQRT2
    c = K_Q / K_T
    a = U[0]
    r = U[1] / k
    p = U[2] / k
    y = U[3] / c
    T = np.empty(4)
    T[0] = 0.25 * (a + r + p + y)
    T[1] = 0.25 * (a - r + p - y)
    T[2] = 0.25 * (a - r - p + y)
    T[3] = 0.25 * (a + r - p - y)
    om = np.empty(4)
    sat = False
    om_max = med[_OMAX]
    for i in range(4):
        o2 = T[i] / K_T
        if o2 < 0.0:
            o2 = 0.0
            sat = True
        o = math.sqrt(o2)
        if o > om_max:
            o = om_max
            sat = True
        om[i] = o
    return om, sat


@njit(cache=True)
def _keep_yaw(U, U3_level, med, vp):
    """Shrink roll and pitch just enough that no rotor thrust goes negative.

    ``U3_level`` is the yaw moment the controller would ask for with roll
    and pitch moments at zero; the demand is taken to vary linearly between
    it and ``U[3]``.  Yaw has the least authority, so it is the channel kept
    when clamping would otherwise eat it.
    """
    K_T, K_Q = _rotor_gains(med, vp)
    k = vp[4] / SQRT2
    c = K_Q / K_T
    a = U[0]
    r = U[1] / k
    p = U[2] / k
    y0 = U3_level / c
    y1 = U[3] / c
    out = U.copy()
    if abs(y0) > a:
        out[1] = 0.0
        out[2] = 0.0
        out[3] = math.copysign(a, y0) * c
        return out
    s = 1.0
    for i in range(4):
        sr = 1.0 if i == 0 or i == 3 else -1.0
        sp = 1.0 if i < 2 else -1.0
        sy = 1.0 if i % 2 == 0 else -1.0
        alpha = a + sy * y0
        beta = sr * r + sp * p + sy * (y1 - y0)
        if beta < 0.0 and alpha + beta < 0.0:
            s = min(s, alpha / -beta)
    out[1] = s * U[1]
    out[2] = s * U[2]
    out[3] = (y0 + s * (y1 - y0)) * c
    return out


@njit(cache=True)
def _body_wrench(om, med, vp):
    """Total thrust and body moments produced by rotor speeds ``om``."""
    K_T, K_Q = _rotor_gains(med, vp)
    k = vp[4] / SQRT2
    T0 = K_T * om[0] * om[0]
    T1 = K_T * om[1] * om[1]
    T2 = K_T * om[2] * om[2]
    T3 = K_T * om[3] * om[3]
    U = np.empty(4)
    U[0] = T0 + T1 + T2 + T3
    U[1] = k * (T0 + T3 - T1 - T2)
    U[2] = k * (T0 + T1 - T2 - T3)
    U[3] = (K_Q / K_T) * (T0 - T1 + T2 - T3)
    return U


@njit(cache=True)
def _power(om, med, vp):
    _, K_Q = _rotor_gains(med, vp)
    P = med[_PIDLE]
    for i in range(4):
        P += K_Q * om[i] * om[i] * om[i] / med[_ETA]
    return P


# --------------------------------------------------------------------------
# dynamics

@njit(cache=True)
def _derivative(y, U, P, med, vp):
    """Time derivative of ``y`` under body wrench ``U`` and power draw ``P``."""
    m = vp[3]
    q = y[6:10]
    v = y[3:6]
    w = y[10:13]
    dy = np.empty(14)
    dy[0:3] = v
    # thrust along body -z, drag evaluated on body-frame velocity
    vb = quat_rotate_inverse(q, v)
    half_rho = 0.5 * med[_RHO]
    fb = np.empty(3)
    fb[0] = -half_rho * med[_CDA] * abs(vb[0]) * vb[0]
    fb[1] = -half_rho * med[_CDA + 1] * abs(vb[1]) * vb[1]
    fb[2] = -U[0] - half_rho * med[_CDA + 2] * abs(vb[2]) * vb[2]
    fi = quat_rotate(q, fb)
    dy[3] = fi[0] / m
    dy[4] = fi[1] / m
    dy[5] = fi[2] / m + med[_B] * G
    J0, J1, J2 = vp[0], vp[1], vp[2]
    Jw0, Jw1, Jw2 = J0 * w[0], J1 * w[1], J2 * w[2]
    # J w_dot = U - w x (J w) - D_w w
    dy[10] = (U[1] - (w[1] * Jw2 - w[2] * Jw1) - med[_DW] * w[0]) / J0
    dy[11] = (U[2] - (w[2] * Jw0 - w[0] * Jw2) - med[_DW + 1] * w[1]) / J1
    dy[12] = (U[3] - (w[0] * Jw1 - w[1] * Jw0) - med[_DW + 2] * w[2]) / J2
    # q_dot = 0.5 q (x) [0, w]
    dy[6] = -0.5 * (q[1] * w[0] + q[2] * w[1] + q[3] * w[2])
    dy[7] = 0.5 * (q[0] * w[0] + q[2] * w[2] - q[3] * w[1])
    dy[8] = 0.5 * (q[0] * w[1] + q[3] * w[0] - q[1] * w[2])
    dy[9] = 0.5 * (q[0] * w[2] + q[1] * w[1] - q[2] * w[0])
    dy[13] = P
    return dy


@njit(cache=True)
def _rk4(y, U, P, med, vp, dt):
    k1 = _derivative(y, U, P, med, vp)
    k2 = _derivative(y + 0.5 * dt * k1, U, P, med, vp)
    k3 = _derivative(y + 0.5 * dt * k2, U, P, med, vp)
    k4 = _derivative(y + dt * k3, U, P, med, vp)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[6:10] = quat_normalize(out[6:10])
    return out


# --------------------------------------------------------------------------
# public wrappers

def rotor_gains(med: MediumParams, vp: VehicleParams):
    """Return ``(K_T, K_Q)`` so that ``T = K_T Omega^2`` and ``Q = K_Q Omega^2``."""
    return _rotor_gains(med.as_array(), vp.as_array())


def rotor_thrust_torque(Omega, med: MediumParams, vp: VehicleParams):
    Omega = np.asarray(Omega, dtype=float)
    if np.any(Omega < 0):
        raise ValueError("rotor speeds must be non-negative")
    K_T, K_Q = rotor_gains(med, vp)
    return K_T * Omega ** 2, K_Q * Omega ** 2


def hover_speed(med: MediumParams, vp: VehicleParams):
    K_T, _ = rotor_gains(med, vp)
    return math.sqrt(med.b * vp.m * G / (4.0 * K_T))


def mix(U, med: MediumParams, vp: VehicleParams) -> RotorSpeeds:
    """Allocate ``U = [U0, U1, U2, U3]`` onto the four rotors."""
    U = np.asarray(U, dtype=float)
    if U[0] < 0:
        raise ValueError("collective thrust U0 must be non-negative")
    om, sat = _mix(U, med.as_array(), vp.as_array())
    return RotorSpeeds(om, bool(sat))


def unmix(rotors, med: MediumParams, vp: VehicleParams):
    """Control vector actually produced by ``rotors``."""
    om = rotors.Omega if isinstance(rotors, RotorSpeeds) else np.asarray(rotors, float)
    return _body_wrench(om, med.as_array(), vp.as_array())


def electrical_power(rotors, med: MediumParams, vp: VehicleParams) -> float:
    om = rotors.Omega if isinstance(rotors, RotorSpeeds) else np.asarray(rotors, float)
    return float(_power(om, med.as_array(), vp.as_array()))


def dynamics_derivative(s: VehicleState, rotors, med: MediumParams, vp: VehicleParams):
    """Flat derivative ``[x_dot, v_dot, q_dot, w_dot, P]`` of state ``s``."""
    om = rotors.Omega if isinstance(rotors, RotorSpeeds) else np.asarray(rotors, float)
    ma, va = med.as_array(), vp.as_array()
    U = _body_wrench(om, ma, va)
    return _derivative(s.as_array(), U, _power(om, ma, va), ma, va)


def step_rk4(s: VehicleState, rotors, med: MediumParams, vp: VehicleParams,
             dt: float) -> VehicleState:
    """One classical Runge-Kutta step with rotor speeds held over the step.

    Power is constant over a step (rotor speeds are held), so the energy
    channel integrates it exactly.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    om = rotors.Omega if isinstance(rotors, RotorSpeeds) else np.asarray(rotors, float)
    ma, va = med.as_array(), vp.as_array()
    U = _body_wrench(om, ma, va)
    y = _rk4(s.as_array(), U, _power(om, ma, va), ma, va, dt)
    if not np.all(np.isfinite(y)):
        raise NumericFailure(f"non-finite state at t={s.t + dt:.4f}")
    return VehicleState.from_array(y, s.t + dt)


# --------------------------------------------------------------------------
# parameter file

def save_params(path, vp: VehicleParams, air: MediumParams, water: MediumParams,
                extra: dict | None = None):
    doc = {"vehicle": asdict(vp), "air": asdict(air), "water": asdict(water)}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_params(path):
    """Read a parameter file; missing keys take the built-in defaults."""
    doc = json.loads(Path(path).read_text())
    vp = VehicleParams(**doc.get("vehicle", {}))
    air = MediumParams.air(**{k: v for k, v in doc.get("air", {}).items() if k != "name"})
    water = MediumParams.water(**{k: v for k, v in doc.get("water", {}).items()
                                  if k != "name"})
    rest = {k: v for k, v in doc.items() if k not in ("vehicle", "air", "water")}
    return vp, air, water, rest


__all__ = [
    "G", "GRAVITY", "NumericFailure", "VehicleParams", "MediumParams",
    "VehicleState", "RotorSpeeds", "quat_multiply", "quat_conjugate",
    "quat_rotate", "quat_rotate_inverse", "quat_from_two_vectors", "skew",
    "dynamics_derivative", "step_rk4", "rotor_thrust_torque", "rotor_gains",
    "hover_speed", "mix", "unmix", "electrical_power", "world_to_inertial",
    "inertial_to_world", "yaw_angle", "save_params", "load_params",
]
