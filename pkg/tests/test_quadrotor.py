import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from streamrecover.errors import GimbalLock, InfeasibleWrench
from streamrecover.quadrotor import (
    ExtendedState,
    QuadParams,
    dynamics,
    euler_rate_matrix,
    euler_rates,
    inverse_euler_rate_matrix,
    mix,
    mixing_matrix,
    rotation_matrix,
    step_rk4,
    unmix,
)

P = QuadParams()


def rot_oracle(phi, theta, psi):
    return Rotation.from_euler("ZYX", [psi, theta, phi]).as_matrix()


def rate_oracle(phi, theta, omega):
    # body rate = roll rate about the body x axis, pitch rate about the
    # once-rolled y axis, yaw rate about the twice-rotated z axis
    Rx = Rotation.from_euler("X", phi).as_matrix()
    Ry = Rotation.from_euler("Y", theta).as_matrix()
    W = np.column_stack([[1.0, 0.0, 0.0], Rx.T @ [0.0, 1.0, 0.0], (Ry @ Rx).T @ [0.0, 0.0, 1.0]])
    return np.linalg.solve(W, omega)


def dynamics_oracle(x, u, p: QuadParams):
    r, v, eta, w, thrust, thrust_rate = x[0:3], x[3:6], x[6:9], x[9:12], x[12], x[13]
    R = rot_oracle(*eta)
    J = np.diag([p.Ix, p.Iy, p.Iz])
    acc = R @ [0.0, 0.0, thrust / p.m] - [0.0, 0.0, p.g]
    wdot = np.linalg.solve(J, u[1:] - np.cross(w, J @ w))
    return np.concatenate([v, acc, rate_oracle(eta[0], eta[1], w), wdot, [thrust_rate, u[0]]])


def random_states(rng, n):
    x = np.empty((n, 14))
    x[:, 0:3] = rng.uniform(-10, 10, (n, 3))
    x[:, 3:6] = rng.uniform(-3, 3, (n, 3))
    x[:, 6:9] = rng.uniform([-1.2, -1.3, -3.1], [1.2, 1.3, 3.1], (n, 3))
    x[:, 9:12] = rng.uniform(-2, 2, (n, 3))
    x[:, 12] = rng.uniform(0.5, 10, n)
    x[:, 13] = rng.uniform(-5, 5, n)
    return x


def test_hover_numbers():
    assert P.hover_rotor_speed == pytest.approx(620.6, abs=0.05)
    assert P.hover_thrust == pytest.approx(4.591, abs=5e-4)
    with pytest.raises(ValueError):
        QuadParams(m=-1.0)


def test_rotation_examples():
    assert np.allclose(rotation_matrix([0.0, 0.0, 0.0]), np.eye(3), atol=0)
    R = rotation_matrix([0.0, 0.0, math.pi / 2])
    assert np.allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


@given(arrays(float, 3, elements=st.floats(-3.0, 3.0)))
def test_rotation_matches_scipy(eta):
    R = rotation_matrix(eta)
    assert np.allclose(R, rot_oracle(*eta), atol=1e-12)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_rotation_batched():
    eta = np.random.default_rng(1).uniform(-1, 1, (7, 3))
    Rb = rotation_matrix(eta)
    for k in range(7):
        assert np.array_equal(Rb[k], rotation_matrix(eta[k]))


def test_euler_rate_matrix():
    assert np.array_equal(euler_rate_matrix(0.0, 0.0), np.eye(3))
    with pytest.raises(GimbalLock):
        euler_rate_matrix(0.0, math.pi / 2)
    with pytest.raises(GimbalLock):
        euler_rates([0.0, -math.pi / 2 + 0.005, 0.0], [0.0, 0.0, 0.0])


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), arrays(float, 3, elements=st.floats(-5, 5)))
def test_euler_rates_match_oracle(phi, theta, omega):
    G = euler_rate_matrix(phi, theta)
    Gi = inverse_euler_rate_matrix(phi, theta)
    assert np.allclose(G @ Gi, np.eye(3), atol=1e-9 / math.cos(theta) ** 2)
    eta_dot = euler_rates([phi, theta, 0.3], omega)
    assert np.allclose(eta_dot, rate_oracle(phi, theta, omega), atol=1e-9 / math.cos(theta) ** 2)
    assert np.allclose(G @ eta_dot, omega, atol=1e-9 / math.cos(theta))


def test_mixing_examples():
    w = 500.0
    assert np.allclose(mix([w] * 4, P), [4 * P.b * w * w, 0, 0, 0], atol=1e-15)
    assert np.allclose(mix([0.0, w, 0.0, w], P), [2 * P.b * w * w, 0, 0, 2 * P.k * w * w],
                       atol=1e-15)
    assert mix([620.6] * 4, P)[0] == pytest.approx(P.m * P.g, abs=1e-3)
    with pytest.raises(ValueError):
        mix([1.0, -1.0, 1.0, 1.0], P)


def test_unmix_examples():
    assert np.allclose(unmix([4 * P.b * 300.0**2, 0, 0, 0], P), 300.0, rtol=1e-14)
    assert np.allclose(unmix([P.m * P.g, 0, 0, 0], P), 620.6, atol=0.05)
    with pytest.raises(InfeasibleWrench):
        unmix([0.0, 1.0, 0.0, 0.0], P)


def test_mixing_matrix_invertible():
    M = mixing_matrix(P)
    # |det| = 8 b^2 (b l)^2 k for this sign pattern
    assert abs(np.linalg.det(M)) == pytest.approx(8 * P.b**2 * (P.b * P.l) ** 2 * P.k, rel=1e-10)
    u = np.array([5.0, 0.01, -0.02, 0.003])
    assert np.allclose(unmix(u, P) ** 2, np.linalg.solve(M, u), rtol=1e-10)


@given(arrays(float, 4, elements=st.floats(0.0, 1500.0)))
def test_mix_round_trip(w):
    back = unmix(mix(w, P), P)
    assert np.allclose(back**2, w**2, rtol=1e-10, atol=1e-10 * max(w.max(), 1.0) ** 2)


def test_unmix_batched_reports_row():
    u = np.array([[P.m * P.g, 0, 0, 0], [0.0, 1.0, 0.0, 0.0]])
    with pytest.raises(InfeasibleWrench) as exc:
        unmix(u, P)
    assert exc.value.index == 1


def test_hover_equilibrium():
    x = ExtendedState.hover([1.0, 2.0, 3.0], P).as_array()
    assert not np.any(dynamics(x, np.zeros(4), P))
    assert np.max(np.abs(step_rk4(x, np.zeros(4), 0.01, P) - x)) < 1e-12


def test_double_thrust_accelerates_up():
    x = ExtendedState.hover([0.0, 0.0, 0.0], P).as_array()
    x[12] = 2 * P.m * P.g
    assert np.allclose(dynamics(x, np.zeros(4), P)[3:6], [0.0, 0.0, P.g], atol=1e-14)


def test_level_hover_holds_position():
    x = ExtendedState.hover([0.0, 0.0, 5.0], P).as_array()
    for _ in range(1000):
        x = step_rk4(x, np.zeros(4), 0.01, P)
    assert np.allclose(x[0:3], [0.0, 0.0, 5.0], atol=1e-12)


def test_dynamics_match_oracle():
    rng = np.random.default_rng(7)
    xs = random_states(rng, 200)
    us = rng.uniform(-0.05, 0.05, (200, 4))
    batch = dynamics(xs, us, P)
    for x, u, d in zip(xs, us, batch):
        ref = dynamics_oracle(x, u, P)
        assert np.allclose(d, ref, rtol=1e-10, atol=1e-10)


def test_gimbal_guard_in_dynamics():
    x = ExtendedState.hover([0.0, 0.0, 0.0], P).as_array()
    x[7] = 0.5 * math.pi - 0.001
    with pytest.raises(GimbalLock):
        dynamics(x, np.zeros(4), P)
    with pytest.raises(ValueError):
        step_rk4(ExtendedState.hover([0, 0, 0], P).as_array(), np.zeros(4), 0.0, P)


def test_state_round_trip():
    x = random_states(np.random.default_rng(3), 1)[0]
    assert np.array_equal(ExtendedState.from_array(x).as_array(), x)


def spin_energy(x):
    w = x[9:12]
    return 0.5 * (P.Ix * w[0] ** 2 + P.Iy * w[1] ** 2 + P.Iz * w[2] ** 2)


def test_torque_free_energy_conservation():
    x = ExtendedState.hover([0.0, 0.0, 0.0], P).as_array()
    x[9:12] = [0.3, -0.2, 0.5]
    e0 = spin_energy(x)
    for _ in range(10_000):
        x = step_rk4(x, np.zeros(4), 1e-3, P)
    assert abs(spin_energy(x) - e0) / e0 <= 1e-6


def forced_run(dt, T=2.0):
    x = ExtendedState.hover([0.0, 0.0, 0.0], P).as_array()
    x[9:12] = [0.2, -0.1, 0.3]
    u = np.array([0.3, 2e-4, -1e-4, 5e-5])
    for _ in range(int(round(T / dt))):
        x = step_rk4(x, u, dt, P)
    return x


def test_rk4_fourth_order():
    ref = forced_run(1e-3)
    errs = [np.max(np.abs(forced_run(dt) - ref)) for dt in (0.04, 0.02, 0.01)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 3.7)
