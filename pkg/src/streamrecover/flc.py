"""Input-output feedback linearization with thrust dynamic extension.

Position is differentiated four times until the extended input appears:

    m * snap = O1 @ Theta + O2,     Theta = [p_ddot, roll_dd, pitch_dd, yaw_dd]
    Theta    = O3 @ u_ext + O4

``O1``/``O2`` are expressed in the inertial frame.  ``B1`` and ``B2``, which
split the body angular acceleration as ``omega_dot = B1 @ euler_dd + B2``, are
expressed in body axes (there ``B1`` coincides with the Euler-rate matrix).
Stacking the three position rows with the yaw row of ``Theta`` gives a square
4x4 system for ``u_ext``.

Like the vehicle model, every function takes one state ``(14,)`` or a batch
``(n, 14)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularDecoupling, ThrustSingular
from .quadrotor import (
    OMG,
    P,
    PDOT,
    QuadParams,
    euler_rate_matrix,
    euler_rates,
    inverse_euler_rate_matrix,
    rotation_matrix,
    unmix,
)

COND_LIMIT = 1e12


@dataclass(frozen=True)
class OuterGains:
    k1: float = 1.0
    k2: float = 1.0
    k3: float = 14.0
    k4: float = 71.0
    k5: float = 154.0
    k6: float = 120.0

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3, self.k4, self.k5, self.k6) <= 0:
            raise ValueError("all gains must be positive")
        if np.any(self.position_poles().real >= 0) or np.any(self.yaw_poles().real >= 0):
            raise ValueError(f"gains {self} do not give a Hurwitz closed loop")

    def position_poles(self) -> np.ndarray:
        return np.roots([1.0, self.k3, self.k4, self.k5, self.k6])

    def yaw_poles(self) -> np.ndarray:
        return np.roots([1.0, self.k1, self.k2])


@dataclass(frozen=True, eq=False)
class GeometryTerms:
    B1: np.ndarray  # (..., 3, 3) body axes
    B2: np.ndarray  # (..., 3)    body axes
    O1: np.ndarray  # (..., 3, 4)
    O2: np.ndarray  # (..., 3)
    O3: np.ndarray  # (..., 4, 4)
    O4: np.ndarray  # (..., 4)

    def theta(self, u_ext):
        """``[p_ddot, roll_dd, pitch_dd, yaw_dd]`` produced by ``u_ext``."""
        return _mv(self.O3, np.asarray(u_ext, dtype=float)) + self.O4

    def snap(self, u_ext, params: QuadParams):
        return (_mv(self.O1, self.theta(u_ext)) + self.O2) / params.m


def _mv(A, v):
    return (A @ v[..., None])[..., 0]


def _cross(a, b):
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _raise_indexed(exc_type, msg, bad):
    idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
    err = exc_type(msg(idx))
    err.index = idx
    raise err


def geometry_terms(x, params: QuadParams, p_min: float | None = None) -> GeometryTerms:
    x = np.asarray(x, dtype=float)
    p, p_dot = x[..., P], x[..., PDOT]
    if p_min is None:
        p_min = 0.1 * params.m * params.g
    if np.any(p < p_min):
        _raise_indexed(ThrustSingular,
                       lambda i: f"thrust {np.atleast_1d(p)[i]:.4g} N below {p_min:.4g} N", p < p_min)

    phi, theta, psi = x[..., 6], x[..., 7], x[..., 8]
    B1 = euler_rate_matrix(phi, theta)
    B1_inv = inverse_euler_rate_matrix(phi, theta)
    R = rotation_matrix(x[..., 6:9])
    w_body = x[..., OMG]
    eta_d = euler_rates(x[..., 6:9], w_body)
    phi_d, theta_d, psi_d = eta_d[..., 0:1], eta_d[..., 1:2], eta_d[..., 2:3]

    ib = R[..., :, 0]
    jb = R[..., :, 1]
    kb = R[..., :, 2]
    # Intermediate axes of the yaw-pitch-roll sequence, inertial frame.
    j2 = np.zeros(x.shape[:-1] + (3,))
    j2[..., 0] = -np.sin(psi)
    j2[..., 1] = np.cos(psi)
    k1 = np.zeros_like(j2)
    k1[..., 2] = 1.0

    w = _mv(R, w_body)
    B2_inertial = (theta_d * psi_d * _cross(k1, j2)
                   + phi_d * _cross(psi_d * k1 + theta_d * j2, ib))
    B2 = _mv(np.swapaxes(R, -1, -2), B2_inertial)

    pc = p[..., None]
    O1 = np.stack([kb, -pc * jb, pc * _cross(j2, kb), pc * _cross(k1, kb)], axis=-1)
    w_x_kb = _cross(w, kb)
    O2 = (pc * _cross(B2_inertial, kb) + pc * _cross(w, w_x_kb)
          + 2.0 * p_dot[..., None] * w_x_kb)

    J = params.J
    O3 = np.zeros(x.shape[:-1] + (4, 4))
    O3[..., 0, 0] = 1.0
    O3[..., 1:, 1:] = B1_inv / J  # (J B1)^-1 = B1^-1 J^-1
    O4 = np.zeros(x.shape[:-1] + (4,))
    gyro = _cross(w_body, J * w_body)
    O4[..., 1:] = -_mv(B1_inv, B2 + gyro / J)
    return GeometryTerms(B1, B2, O1, O2, O3, O4)


def kinematic_derivatives(x, params: QuadParams):
    """Acceleration and jerk implied by thrust, its rate and the attitude."""
    x = np.asarray(x, dtype=float)
    R = rotation_matrix(x[..., 6:9])
    kb = R[..., :, 2]
    w = _mv(R, x[..., OMG])
    a = x[..., P, None] / params.m
    acc = a * kb
    acc[..., 2] -= params.g
    jerk = (x[..., PDOT, None] / params.m) * kb + a * _cross(w, kb)
    return acc, jerk


def outer_position_law(x, ref, gains: OuterGains, params: QuadParams, feedforward: bool = False):
    """Commanded snap from the position, velocity, acceleration and jerk errors.

    ``ref[..., k, :]`` is the ``k``-th derivative of the reference position;
    with ``feedforward`` the reference snap (``k = 4``) is added to the command.
    """
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    acc, jerk = kinematic_derivatives(x, params)
    s = (gains.k3 * (ref[..., 3, :] - jerk) + gains.k4 * (ref[..., 2, :] - acc)
         + gains.k5 * (ref[..., 1, :] - x[..., 3:6]) + gains.k6 * (ref[..., 0, :] - x[..., 0:3]))
    if feedforward:
        s = s + ref[..., 4, :]
    return s


def yaw_law(psi, psi_dot, gains: OuterGains):
    return -gains.k1 * psi_dot - gains.k2 * psi


def decoupling_system(terms: GeometryTerms) -> np.ndarray:
    """The 4x4 matrix taking ``u_ext`` to the three snap rows (times m) and yaw acceleration."""
    A = np.empty(terms.O3.shape)
    A[..., :3, :] = terms.O1 @ terms.O3
    A[..., 3, :] = terms.O3[..., 3, :]
    return A


def solve_extended_input(s, u_psi, terms: GeometryTerms, params: QuadParams) -> np.ndarray:
    """Extended input ``[u_p, tau_roll, tau_pitch, tau_yaw]`` realising snap ``s`` and yaw ``u_psi``."""
    A = decoupling_system(terms)
    rhs = np.empty(terms.O4.shape)
    rhs[..., :3] = params.m * np.asarray(s, dtype=float) - _mv(terms.O1, terms.O4) - terms.O2
    rhs[..., 3] = u_psi - terms.O4[..., 3]
    try:
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise SingularDecoupling("decoupling matrix is singular") from exc
    cond = np.abs(A).sum(axis=-2).max(axis=-1) * np.abs(A_inv).sum(axis=-2).max(axis=-1)
    bad = ~(cond < COND_LIMIT)
    if np.any(bad):
        _raise_indexed(SingularDecoupling,
                       lambda i: f"decoupling matrix condition number {np.atleast_1d(cond)[i]:.3e}", bad)
    return _mv(A_inv, rhs)


def control_step(x, ref, gains: OuterGains, params: QuadParams, feedforward: bool = False):
    """One controller evaluation.

    Returns ``(u_ext, rotor_speeds)`` where the rotor speeds realise the
    physical wrench ``[p, tau]`` with ``p`` taken from the current state.
    """
    x = np.asarray(x, dtype=float)
    terms = geometry_terms(x, params)
    s = outer_position_law(x, ref, gains, params, feedforward)
    psi_dot = euler_rates(x[..., 6:9], x[..., OMG])[..., 2]
    u_psi = yaw_law(x[..., 8], psi_dot, gains)
    u_ext = solve_extended_input(s, u_psi, terms, params)
    wrench = u_ext.copy()
    wrench[..., 0] = x[..., P]
    return u_ext, unmix(wrench, params)
