"""Rigid-body quadrotor with thrust dynamic extension.

State vectors are flat arrays of 14 entries laid out as

    [x y z | vx vy vz | roll pitch yaw | wx wy wz | p p_dot]

with the angular velocity in body axes and ``p`` the collective thrust.  The
extended input is ``[u_p, tau_roll, tau_pitch, tau_yaw]`` where ``u_p`` is the
second derivative of thrust.

Functions accept a single state of shape ``(14,)`` or a batch ``(n, 14)``;
a batch advances several independent vehicles in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GimbalLock, InfeasibleWrench

POS = slice(0, 3)
VEL = slice(3, 6)
EUL = slice(6, 9)
OMG = slice(9, 12)
P = 12
PDOT = 13
STATE_SIZE = 14

GIMBAL_EPS = 0.01


@dataclass(frozen=True)
class QuadParams:
    m: float = 0.468
    g: float = 9.81
    l: float = 0.225
    Ix: float = 4.856e-3
    Iy: float = 4.856e-3
    Iz: float = 8.801e-3
    b: float = 2.98e-6
    k: float = 1.14e-7
    omega_max: float = 800.0

    def __post_init__(self):
        for name in ("m", "g", "l", "Ix", "Iy", "Iz", "b", "k", "omega_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"quad parameter {name} must be positive")

    @property
    def J(self) -> np.ndarray:
        return np.array([self.Ix, self.Iy, self.Iz])

    @property
    def hover_thrust(self) -> float:
        return self.m * self.g

    @property
    def hover_rotor_speed(self) -> float:
        return math.sqrt(self.m * self.g / (4.0 * self.b))


@dataclass
class ExtendedState:
    r: np.ndarray
    v: np.ndarray
    euler: np.ndarray
    omega: np.ndarray
    p: float
    p_dot: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.r, self.v, self.euler, self.omega, [self.p, self.p_dot]]).astype(float)

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[POS].copy(), x[VEL].copy(), x[EUL].copy(), x[OMG].copy(), float(x[P]), float(x[PDOT]))

    @classmethod
    def hover(cls, position, params: QuadParams, yaw=0.0):
        """At rest, level, thrust balancing gravity."""
        return cls(np.asarray(position, dtype=float), np.zeros(3), np.array([0.0, 0.0, yaw]),
                   np.zeros(3), params.hover_thrust, 0.0)


def check_gimbal(theta, eps=GIMBAL_EPS):
    bad = np.abs(theta) >= 0.5 * np.pi - eps
    if np.any(bad):
        idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
        th = float(np.atleast_1d(theta)[idx])
        err = GimbalLock(f"pitch {th:.6f} rad is within {eps} rad of +-pi/2")
        err.index = idx
        raise err


def rotation_matrix(euler) -> np.ndarray:
    """Body-to-inertial rotation for yaw-pitch-roll (3-2-1) Euler angles."""
    euler = np.asarray(euler, dtype=float)
    phi, theta, psi = euler[..., 0], euler[..., 1], euler[..., 2]
    sf, cf = np.sin(phi), np.cos(phi)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(psi), np.cos(psi)
    R = np.empty(euler.shape[:-1] + (3, 3))
    R[..., 0, 0] = ct * cp
    R[..., 0, 1] = st * cp * sf - sp * cf
    R[..., 0, 2] = st * cp * cf + sp * sf
    R[..., 1, 0] = ct * sp
    R[..., 1, 1] = st * sp * sf + cp * cf
    R[..., 1, 2] = st * sp * cf - cp * sf
    R[..., 2, 0] = -st
    R[..., 2, 1] = ct * sf
    R[..., 2, 2] = ct * cf
    return R


def euler_rate_matrix(phi, theta, eps=GIMBAL_EPS) -> np.ndarray:
    """Matrix taking Euler-angle rates to body angular velocity."""
    check_gimbal(theta, eps)
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    sf, cf = np.sin(phi), np.cos(phi)
    st, ct = np.sin(theta), np.cos(theta)
    G = np.zeros(phi.shape + (3, 3))
    G[..., 0, 0] = 1.0
    G[..., 0, 2] = -st
    G[..., 1, 1] = cf
    G[..., 1, 2] = ct * sf
    G[..., 2, 1] = -sf
    G[..., 2, 2] = cf * ct
    return G


def inverse_euler_rate_matrix(phi, theta, eps=GIMBAL_EPS) -> np.ndarray:
    check_gimbal(theta, eps)
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    sf, cf = np.sin(phi), np.cos(phi)
    ct, tt = np.cos(theta), np.tan(theta)
    G = np.zeros(phi.shape + (3, 3))
    G[..., 0, 0] = 1.0
    G[..., 0, 1] = sf * tt
    G[..., 0, 2] = cf * tt
    G[..., 1, 1] = cf
    G[..., 1, 2] = -sf
    G[..., 2, 1] = sf / ct
    G[..., 2, 2] = cf / ct
    return G


def euler_rates(euler, omega, eps=GIMBAL_EPS) -> np.ndarray:
    """Euler-angle rates from body angular velocity (closed-form inverse)."""
    euler = np.asarray(euler, dtype=float)
    omega = np.asarray(omega, dtype=float)
    phi, theta = euler[..., 0], euler[..., 1]
    check_gimbal(theta, eps)
    sf, cf = np.sin(phi), np.cos(phi)
    ct, tt = np.cos(theta), np.tan(theta)
    wx, wy, wz = omega[..., 0], omega[..., 1], omega[..., 2]
    out = np.empty(omega.shape)
    out[..., 0] = wx + sf * tt * wy + cf * tt * wz
    out[..., 1] = cf * wy - sf * wz
    out[..., 2] = (sf * wy + cf * wz) / ct
    return out


def mixing_matrix(params: QuadParams) -> np.ndarray:
    b, bl, k = params.b, params.b * params.l, params.k
    return np.array([
        [b, b, b, b],
        [0.0, -bl, 0.0, bl],
        [-bl, 0.0, bl, 0.0],
        [-k, k, -k, k],
    ])


def mix(rotor_speeds, params: QuadParams) -> np.ndarray:
    """Rotor speeds (rad/s) to wrench ``[p, tau_roll, tau_pitch, tau_yaw]``."""
    w = np.asarray(rotor_speeds, dtype=float)
    if np.any(w < 0):
        raise ValueError("rotor speeds must be non-negative")
    return (w * w) @ mixing_matrix(params).T


def unmix_squared(u, params: QuadParams) -> np.ndarray:
    """Squared rotor speeds producing wrench ``u`` (closed-form inverse mixer)."""
    u = np.asarray(u, dtype=float)
    a = u[..., 0] / params.b
    c = u[..., 3] / params.k
    bl2 = 2.0 * params.b * params.l
    roll = u[..., 1] / bl2
    pitch = u[..., 2] / bl2
    s = np.empty(u.shape)
    s[..., 0] = 0.25 * (a - c) - pitch
    s[..., 1] = 0.25 * (a + c) - roll
    s[..., 2] = 0.25 * (a - c) + pitch
    s[..., 3] = 0.25 * (a + c) + roll
    return s


def unmix(u, params: QuadParams) -> np.ndarray:
    """Rotor speeds for wrench ``u``; exceeding ``omega_max`` is not checked here."""
    s = unmix_squared(u, params)
    floor = -1e-12 * np.maximum(np.abs(s).max(axis=-1, keepdims=True), 1.0)
    bad = s < floor
    if np.any(bad):
        s2 = np.atleast_2d(s)
        row = int(np.flatnonzero(np.atleast_2d(bad).any(axis=-1))[0])
        j = int(np.argmin(s2[row]))
        err = InfeasibleWrench(
            f"wrench {np.atleast_2d(u)[row].tolist()} needs rotor {j + 1} "
            f"squared speed {s2[row, j]:.4g} < 0")
        err.index = row
        raise err
    return np.sqrt(np.maximum(s, 0.0))


def dynamics(x, u_ext, params: QuadParams) -> np.ndarray:
    """Time derivative of the extended state under extended input ``u_ext``."""
    x = np.asarray(x, dtype=float)
    u_ext = np.asarray(u_ext, dtype=float)
    phi, theta, psi = x[..., 6], x[..., 7], x[..., 8]
    check_gimbal(theta)
    sf, cf = np.sin(phi), np.cos(phi)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(psi), np.cos(psi)
    tt = st / ct
    a = x[..., P] / params.m
    wx, wy, wz = x[..., 9], x[..., 10], x[..., 11]
    Ix, Iy, Iz = params.Ix, params.Iy, params.Iz

    xdot = np.empty(x.shape)
    xdot[..., 0:3] = x[..., 3:6]
    # Thrust acts along the body z axis (third rotation-matrix column).
    xdot[..., 3] = a * (st * cp * cf + sp * sf)
    xdot[..., 4] = a * (st * sp * cf - cp * sf)
    xdot[..., 5] = a * (ct * cf) - params.g
    xdot[..., 6] = wx + sf * tt * wy + cf * tt * wz
    xdot[..., 7] = cf * wy - sf * wz
    xdot[..., 8] = (sf * wy + cf * wz) / ct
    xdot[..., 9] = ((Iy - Iz) * wy * wz + u_ext[..., 1]) / Ix
    xdot[..., 10] = ((Iz - Ix) * wz * wx + u_ext[..., 2]) / Iy
    xdot[..., 11] = ((Ix - Iy) * wx * wy + u_ext[..., 3]) / Iz
    xdot[..., 12] = x[..., PDOT]
    xdot[..., 13] = u_ext[..., 0]
    return xdot


def step_rk4(x, u_ext, dt, params: QuadParams) -> np.ndarray:
    """One classical Runge-Kutta step with the input held constant."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = dynamics(x, u_ext, params)
    k2 = dynamics(x + 0.5 * dt * k1, u_ext, params)
    k3 = dynamics(x + 0.5 * dt * k2, u_ext, params)
    k4 = dynamics(x + dt * k3, u_ext, params)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
