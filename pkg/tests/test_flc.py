import math

import numpy as np
import pytest
import sympy as sy

from streamrecover.errors import GimbalLock, SingularDecoupling, ThrustSingular
from streamrecover.flc import (
    OuterGains,
    control_step,
    decoupling_system,
    geometry_terms,
    kinematic_derivatives,
    outer_position_law,
    solve_extended_input,
    yaw_law,
)
from streamrecover.quadrotor import ExtendedState, QuadParams, dynamics, euler_rates, step_rk4
from streamrecover.streamline import PolynomialReference

P = QuadParams()
G = OuterGains()


def random_states(rng, n):
    x = np.empty((n, 14))
    x[:, 0:3] = rng.uniform(-10, 10, (n, 3))
    x[:, 3:6] = rng.uniform(-3, 3, (n, 3))
    x[:, 6:9] = rng.uniform([-1.0, -1.0, -3.0], [1.0, 1.0, 3.0], (n, 3))
    x[:, 9:12] = rng.uniform(-2, 2, (n, 3))
    x[:, 12] = rng.uniform(0.5 * P.m * P.g, 3 * P.m * P.g, n)
    x[:, 13] = rng.uniform(-3, 3, n)
    return x


def hover(pos=(0.0, 0.0, 0.0)):
    return ExtendedState.hover(pos, P).as_array()


def test_default_poles():
    assert np.allclose(np.sort(G.position_poles().real), [-5, -4, -3, -2], atol=1e-9)
    assert np.all(G.yaw_poles().real < 0)


def test_gains_validation():
    with pytest.raises(ValueError):
        OuterGains(k3=-1.0)
    with pytest.raises(ValueError):
        OuterGains(k3=1.0, k4=1.0, k5=10.0, k6=1.0)  # fails the Routh-Hurwitz test


def test_outer_law_examples():
    x = hover()
    ref = np.zeros((5, 3))
    assert not np.any(outer_position_law(x, ref, G, P))
    ref[0, 0] = 1.0
    assert np.allclose(outer_position_law(x, ref, G, P), [120.0, 0.0, 0.0])
    ref[4] = [0.5, -0.25, 2.0]
    assert np.allclose(outer_position_law(x, ref, G, P, feedforward=True), [120.5, -0.25, 2.0])


def test_yaw_law():
    assert yaw_law(0.0, 0.0, G) == 0.0
    assert yaw_law(1.0, 0.0, G) == -1.0
    # closed double integrator from psi = 1
    psi, rate, dt, peak = 1.0, 0.0, 1e-3, 0.0
    for _ in range(30_000):
        acc = yaw_law(psi, rate, G)
        psi, rate = psi + dt * rate, rate + dt * acc
        peak = max(peak, abs(psi))
    assert peak <= 1.0 and abs(psi) < 1e-5 and abs(rate) < 1e-5


def test_hover_solutions():
    x = hover()
    terms = geometry_terms(x, P)
    assert np.allclose(solve_extended_input(np.zeros(3), 0.0, terms, P), 0.0, atol=1e-15)
    a = 0.7
    u = solve_extended_input(np.array([0.0, 0.0, a]), 0.0, terms, P)
    assert np.allclose(u, [P.m * a, 0.0, 0.0, 0.0], atol=1e-14)


def test_linear_solve_residual():
    rng = np.random.default_rng(11)
    xs = random_states(rng, 300)
    s = rng.uniform(-20, 20, (300, 3))
    u_psi = rng.uniform(-2, 2, 300)
    terms = geometry_terms(xs, P)
    u = solve_extended_input(s, u_psi, terms, P)
    A = decoupling_system(terms)
    rhs = np.concatenate([P.m * s - np.einsum("nij,nj->ni", terms.O1, terms.O4) - terms.O2,
                          (u_psi - terms.O4[:, 3])[:, None]], axis=1)
    assert np.max(np.abs(np.einsum("nij,nj->ni", A, u) - rhs)) <= 1e-9 * np.max(np.abs(rhs))
    assert np.allclose(terms.snap(u, P), s, rtol=0, atol=1e-9 * 20)
    assert np.allclose(terms.theta(u)[:, 3], u_psi, atol=1e-12)


def test_batch_matches_single():
    rng = np.random.default_rng(5)
    xs = random_states(rng, 6)
    refs = rng.uniform(-1, 1, (6, 5, 3))
    s = outer_position_law(xs, refs, G, P, feedforward=True)
    ub = solve_extended_input(s, np.zeros(6), geometry_terms(xs, P), P)
    for k in range(6):
        sk = outer_position_law(xs[k], refs[k], G, P, feedforward=True)
        u = solve_extended_input(sk, 0.0, geometry_terms(xs[k], P), P)
        assert np.allclose(u, ub[k], rtol=1e-13, atol=1e-13)


def test_kinematics_match_dynamics():
    rng = np.random.default_rng(2)
    x = random_states(rng, 1)[0]
    acc, jerk = kinematic_derivatives(x, P)
    assert np.allclose(acc, dynamics(x, np.zeros(4), P)[3:6], atol=1e-13)
    # jerk is the time derivative of the acceleration along the free motion
    h = 1e-6
    xp = x + h * dynamics(x, np.zeros(4), P)
    xm = x - h * dynamics(x, np.zeros(4), P)
    fd = (kinematic_derivatives(xp, P)[0] - kinematic_derivatives(xm, P)[0]) / (2 * h)
    assert np.allclose(jerk, fd, rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_snap_against_simulated_jerk(seed):
    rng = np.random.default_rng(100 + seed)
    x = random_states(rng, 1)[0]
    u = rng.uniform(-0.05, 0.05, 4)
    u[0] = rng.uniform(-2, 2)
    snap = geometry_terms(x, P).snap(u, P)
    dt = 1e-5
    j = [kinematic_derivatives(x, P)[1]]
    xk = x
    for _ in range(2):
        xk = step_rk4(xk, u, dt, P)
        j.append(kinematic_derivatives(xk, P)[1])
    fd = (-3 * j[0] + 4 * j[1] - j[2]) / (2 * dt)
    assert np.max(np.abs(fd - snap)) <= 1e-4 * np.max(np.abs(snap))


def test_theta_round_trip():
    rng = np.random.default_rng(3)
    xs = random_states(rng, 50)
    u = rng.uniform(-0.1, 0.1, (50, 4))
    terms = geometry_terms(xs, P)
    theta = terms.theta(u)
    w = xs[:, 9:12]
    J = P.J
    # torques from Euler accelerations: J (B1 eta_dd + B2) + w x J w
    wdot = np.einsum("nij,nj->ni", terms.B1, theta[:, 1:]) + terms.B2
    tau = J * wdot + np.cross(w, J * w)
    assert np.allclose(tau, u[:, 1:], rtol=0, atol=1e-12)
    assert np.allclose(theta[:, 0], u[:, 0], atol=1e-15)
    # and B1, B2 really split the body angular acceleration into Euler-angle terms
    h = 1e-6
    for k in range(5):
        x = xs[k]
        eta_dd = theta[k, 1:]
        xdot = dynamics(x, u[k], P)
        xp, xm = x + h * xdot, x - h * xdot
        fd = (euler_rates(xp[6:9], xp[9:12]) - euler_rates(xm[6:9], xm[9:12])) / (2 * h)
        assert np.allclose(fd, eta_dd, rtol=1e-5, atol=1e-6)


def test_guards():
    x = hover()
    x[12] = 0.05 * P.m * P.g
    with pytest.raises(ThrustSingular):
        geometry_terms(x, P)
    x = hover()
    x[7] = 0.5 * math.pi - 0.005
    with pytest.raises(GimbalLock):
        control_step(x, np.zeros((5, 3)), G, P)
    x = hover()
    x[12] = 0.0
    terms = geometry_terms(x, P, p_min=0.0)
    with pytest.raises(SingularDecoupling):
        solve_extended_input(np.zeros(3), 0.0, terms, P)


def test_indexed_errors():
    xs = np.stack([hover(), hover()])
    xs[1, 12] = 0.01
    with pytest.raises(ThrustSingular) as exc:
        geometry_terms(xs, P)
    assert exc.value.index == 1


def test_hover_rotor_speeds():
    x = hover([1.0, 2.0, 3.0])
    ref = PolynomialReference.hover([1.0, 2.0, 3.0]).derivatives(0.0)
    u, w = control_step(x, ref, G, P)
    assert np.allclose(u, 0.0, atol=1e-15)
    assert np.allclose(w, P.hover_rotor_speed, rtol=1e-12)
    assert w[0] == pytest.approx(620.6, abs=0.05)


def flat_oracle(coeffs, t0):
    """State and body torque of the yaw-free flat trajectory, derived symbolically."""
    t = sy.Symbol("t")
    r = sy.Matrix([sum(c * t**k for k, c in enumerate(reversed(cs))) for cs in coeffs])
    f = P.m * (r.diff(t, 2) + sy.Matrix([0, 0, P.g]))
    p = sy.sqrt(f.dot(f))
    kb = f / p
    phi = -sy.asin(kb[1])
    theta = sy.atan2(kb[0], kb[2])
    Rx = sy.Matrix([[1, 0, 0], [0, sy.cos(phi), -sy.sin(phi)], [0, sy.sin(phi), sy.cos(phi)]])
    Ry = sy.Matrix([[sy.cos(theta), 0, sy.sin(theta)], [0, 1, 0], [-sy.sin(theta), 0, sy.cos(theta)]])
    R = Ry * Rx
    Wh = R.T * R.diff(t)
    w = sy.Matrix([Wh[2, 1], Wh[0, 2], Wh[1, 0]])
    J = sy.diag(P.Ix, P.Iy, P.Iz)
    tau = J * w.diff(t) + w.cross(J * w)

    def val(e):
        return np.array(sy.N(e.subs(t, t0), 30), dtype=float).ravel()
    x = np.concatenate([val(r), val(r.diff(t)), [float(val(sy.Matrix([phi]))[0]),
                        float(val(sy.Matrix([theta]))[0]), 0.0], val(w),
                        val(sy.Matrix([p])), val(sy.Matrix([p.diff(t)]))])
    return x, val(tau)


@pytest.mark.parametrize("t0", [0.4, 1.3])
def test_feedforward_torque_matches_inverse_dynamics(t0):
    coeffs = [[-0.02, 0.15, 0.3, 1.0, 0.0], [0.03, -0.1, 0.2, -0.5, 2.0], [0.01, 0.05, -0.2, 0.1, 5.0]]
    x, tau = flat_oracle(coeffs, t0)
    ref = PolynomialReference(coeffs).derivatives(t0)
    u, _ = control_step(x, ref, G, P, feedforward=True)
    assert np.allclose(u[1:], tau, rtol=0, atol=1e-6 * max(1.0, np.max(np.abs(tau))))


def fly(x, ref_fn, T, dt, feedforward=False):
    out = []
    for i in range(int(round(T / dt)) + 1):
        t = i * dt
        ref = ref_fn(t)
        u, _ = control_step(x, ref, G, P, feedforward)
        out.append((t, np.linalg.norm(x[0:3] - ref[0]), x[8], euler_rates(x[6:9], x[9:12])[2]))
        x = step_rk4(x, u, dt, P)
    return np.array(out)


def test_offset_convergence_is_monotone():
    target = PolynomialReference.hover([0.0, 0.0, 10.0])
    x = hover([0.5, 0.0, 10.0])
    log = fly(x, target.derivatives, 6.0, 1e-3)
    late = log[log[:, 0] >= 1.0, 1]
    assert np.all(np.diff(late) <= 1e-12)
    assert log[-1, 1] < 1e-3


def test_yaw_internal_dynamics():
    # a batch of vehicles, one per initial yaw, all holding position
    psi0 = np.linspace(-1.45, 1.45, 15)
    xs = np.repeat(hover([0.0, 0.0, 10.0])[None], psi0.size, axis=0)
    xs[:, 8] = psi0
    ref = np.repeat(PolynomialReference.hover([0.0, 0.0, 10.0]).derivatives(0.0)[None], psi0.size, axis=0)
    for _ in range(4000):
        u, _ = control_step(xs, ref, G, P)
        xs = step_rk4(xs, u, 5e-3, P)
    assert np.max(np.abs(xs[:, 8])) < 1e-4
    assert np.max(np.abs(euler_rates(xs[:, 6:9], xs[:, 9:12])[:, 2])) < 1e-4
