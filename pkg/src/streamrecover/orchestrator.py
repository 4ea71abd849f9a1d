"""End-to-end recovery: solve the field, plan, fly every healthy vehicle, search the speed."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BisectionBudgetExceeded,
    GimbalLock,
    InfeasibleWrench,
    InsideObstacle,
    LowerBoundUnsafe,
    OutOfDomain,
    QuadFailure,
    RecoveryError,
    ScenarioError,
    SingularDecoupling,
    ThrustSingular,
)
from .fdm import GridSpec, StreamFieldGrid, solve_field
from .flc import OuterGains, control_step
from .flowfield import ObstacleSpec, PlanarPoint
from .quadrotor import P, ExtendedState, QuadParams, step_rk4
from .streamline import PlanarPath, ReferenceTrajectory, TraceConfig, fit_reference, trace

log = logging.getLogger(__name__)

TRACKING_TRANSIENT = 3.0

# Errors meaning "the controller cannot fly this safely", as opposed to bad input.
_UNSAFE_CAUSES = (InfeasibleWrench, GimbalLock, ThrustSingular, SingularDecoupling)


@dataclass(frozen=True)
class HealthyQuad:
    quad_id: str
    state: np.ndarray  # extended state, 14 entries

    @classmethod
    def at_rest(cls, quad_id, position, params: QuadParams):
        return cls(str(quad_id), ExtendedState.hover(position, params).as_array())


@dataclass(frozen=True, eq=False)
class RecoveryScenario:
    grid: GridSpec
    K: float
    obstacles: tuple[ObstacleSpec, ...]
    healthy: tuple[HealthyQuad, ...]
    params: QuadParams = QuadParams()
    gains: OuterGains = OuterGains()
    sim_dt: float = 0.01
    horizon: float = 30.0
    v_bounds: tuple[float, float] = (0.1, 10.0)
    v_tolerance: float = 0.01
    max_iterations: int = 20
    segment_duration: float = 2.0
    segment_length: float = 2.0
    feedforward: bool = False

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "healthy", tuple(self.healthy))
        lo, hi = self.v_bounds
        if not 0 < lo < hi:
            raise ScenarioError(f"speed bounds must satisfy 0 < v_lo < v_hi, got {self.v_bounds}")
        if not (self.K > 0 and self.sim_dt > 0 and self.horizon > 0 and self.v_tolerance > 0):
            raise ScenarioError("K, sim_dt, horizon and v_tolerance must be positive")
        ids = [q.quad_id for q in self.healthy]
        if len(set(ids)) != len(ids):
            raise ScenarioError("healthy quad ids must be unique")
        for q in self.healthy:
            x, y = q.state[0], q.state[1]
            if not self.grid.contains(x, y):
                raise OutOfDomain(f"quad {q.quad_id!r} starts outside the domain at ({x}, {y})")
            for h, ob in enumerate(self.obstacles):
                if ob.contains(x, y):
                    d = math.hypot(x - ob.center.x, y - ob.center.y)
                    raise InsideObstacle(
                        f"quad {q.quad_id!r} starts {d:.3f} m from obstacle {h}, "
                        f"inside its {ob.radius} m clearance radius")


@dataclass(eq=False)
class QuadLog:
    quad_id: str
    path: PlanarPath
    reference: ReferenceTrajectory
    t: np.ndarray  # (n,)
    states: np.ndarray  # (n, 14)
    ref: np.ndarray  # (n, 4, 3): reference position, velocity, acceleration, jerk
    wrench: np.ndarray  # (n, 4): p, tau_roll, tau_pitch, tau_yaw
    rotor: np.ndarray  # (n, 4)

    def tracking_error(self) -> np.ndarray:
        return np.linalg.norm(self.states[:, 0:3] - self.ref[:, 0], axis=1)


@dataclass(eq=False)
class SimulationLog:
    speed: float
    quads: list[QuadLog] = field(default_factory=list)

    def max_rotor_speed(self) -> float:
        return max((float(q.rotor.max()) for q in self.quads), default=0.0)

    def min_rotor_speed(self) -> float:
        return min((float(q.rotor.min()) for q in self.quads), default=math.inf)

    def max_tracking_error(self, after: float = TRACKING_TRANSIENT) -> float:
        worst = 0.0
        for q in self.quads:
            sel = q.t >= after
            if sel.any():
                worst = max(worst, float(q.tracking_error()[sel].max()))
        return worst


@dataclass(frozen=True)
class SafetyVerdict:
    safe: bool
    max_rotor_speed: float
    first_violation: tuple[str, int, float] | None = None  # (quad id, rotor 1..4, time)


@dataclass(eq=False)
class SpeedSearchResult:
    v_star: float
    log: SimulationLog
    iterations: int
    history: list[tuple[float, bool]]


def flight_steps(scenario: RecoveryScenario, ref: ReferenceTrajectory) -> int:
    """Number of ``sim_dt`` steps flown: up to the horizon or the end of the reference."""
    return int(math.floor(min(scenario.horizon, ref.t1) / scenario.sim_dt + 1e-9))


def _simulate_batch(quads, plans, scenario: RecoveryScenario) -> list[QuadLog]:
    """Fly all vehicles in lockstep; each stops at the end of its own reference."""
    params, gains, dt = scenario.params, scenario.gains, scenario.sim_dt
    nq = len(quads)
    steps = np.array([flight_steps(scenario, ref) for _, ref in plans])
    N = int(steps.max())
    t = dt * np.arange(N + 1)
    refs = np.full((nq, N + 1, 5, 3), np.nan)
    for q, (_, ref) in enumerate(plans):
        refs[q, :steps[q] + 1] = ref.derivatives_many(t[:steps[q] + 1])
    states = np.full((nq, N + 1, 14), np.nan)
    wrench = np.full((nq, N + 1, 4), np.nan)
    rotor = np.full((nq, N + 1, 4), np.nan)

    x_all = np.array([q.state for q in quads], dtype=float)
    for i in range(N + 1):
        act = np.flatnonzero(steps >= i)
        x = x_all[act]
        try:
            u_ext, w = control_step(x, refs[act, i], gains, params, scenario.feedforward)
        except RecoveryError as exc:
            raise QuadFailure(quads[act[getattr(exc, "index", 0)]].quad_id, exc) from exc
        states[act, i] = x
        wrench[act, i, 0] = x[:, P]
        wrench[act, i, 1:] = u_ext[:, 1:]
        rotor[act, i] = w
        go = act[steps[act] > i]
        if go.size:
            try:
                x_all[go] = step_rk4(x_all[go], u_ext[steps[act] > i], dt, params)
            except RecoveryError as exc:
                raise QuadFailure(quads[go[getattr(exc, "index", 0)]].quad_id, exc) from exc

    return [QuadLog(quad.quad_id, path, ref, t[:n + 1].copy(), states[q, :n + 1],
                    refs[q, :n + 1, :4], wrench[q, :n + 1], rotor[q, :n + 1])
            for q, (quad, (path, ref), n) in enumerate(zip(quads, plans, steps))]


def plan_quad(field_: StreamFieldGrid, quad: HealthyQuad, speed: float, scenario: RecoveryScenario):
    """Trace and fit one vehicle's reference at sliding speed ``speed``."""
    start = PlanarPoint(float(quad.state[0]), float(quad.state[1]))
    cfg = TraceConfig.for_field(field_, speed, scenario.horizon)
    path = trace(field_, start, speed, cfg)
    # Fit quality depends on arc length per segment, so fast flights get shorter segments.
    seg = min(scenario.segment_duration, scenario.segment_length / speed)
    ref = fit_reference(path, float(quad.state[2]), seg)
    return path, ref


def solve_scenario_field(scenario: RecoveryScenario) -> StreamFieldGrid:
    return solve_field(scenario.grid, scenario.obstacles, scenario.K)


def simulate_recovery(scenario: RecoveryScenario, v: float,
                      field_: StreamFieldGrid | None = None) -> SimulationLog:
    """Plan and fly every healthy quad at common sliding speed ``v``.

    Any per-vehicle error aborts the run as :class:`QuadFailure` naming the vehicle.
    """
    if not v > 0:
        raise ValueError("sliding speed must be positive")
    out = SimulationLog(float(v))
    if not scenario.healthy:
        return out
    plans = plan_recovery(scenario, v, field_)
    out.quads = _simulate_batch(scenario.healthy, plans, scenario)
    return out


def plan_recovery(scenario: RecoveryScenario, v: float, field_: StreamFieldGrid | None = None):
    """``(path, reference)`` for every healthy quad at sliding speed ``v``."""
    if not v > 0:
        raise ValueError("sliding speed must be positive")
    if not scenario.healthy:
        return []
    if field_ is None:
        field_ = solve_scenario_field(scenario)
    plans = []
    for quad in scenario.healthy:
        try:
            plans.append(plan_quad(field_, quad, v, scenario))
        except RecoveryError as exc:
            raise QuadFailure(quad.quad_id, exc) from exc
    return plans


def check_safety(sim: SimulationLog, omega_max: float) -> SafetyVerdict:
    """Every rotor speed sample must lie in ``(0, omega_max]``."""
    peak = 0.0
    first = None
    for q in sim.quads:
        peak = max(peak, float(q.rotor.max()))
        bad = (q.rotor > omega_max) | (q.rotor <= 0.0)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            cand = (q.quad_id, int(j) + 1, float(q.t[i]))
            if first is None or cand[2] < first[2]:
                first = cand
    return SafetyVerdict(first is None, peak, first)


def clearance_by_obstacle(sim: SimulationLog, obstacles: Sequence[ObstacleSpec], use_reference=False):
    """Minimum center distance per obstacle over all quads and times."""
    out = np.full(len(obstacles), math.inf)
    for q in sim.quads:
        xy = q.ref[:, 0, :2] if use_reference else q.states[:, :2]
        for h, ob in enumerate(obstacles):
            d = np.hypot(xy[:, 0] - ob.center.x, xy[:, 1] - ob.center.y)
            out[h] = min(out[h], float(d.min()))
    return out


def check_clearance(sim: SimulationLog, obstacles: Sequence[ObstacleSpec]) -> float:
    """Smallest distance from any actual position to any obstacle center (inf if none)."""
    per = clearance_by_obstacle(sim, obstacles)
    return float(per.min()) if per.size else math.inf


def evaluate_speed(scenario, v, field_=None):
    """Fly at ``v`` and judge safety; controller breakdowns count as unsafe.

    Returns ``(safe, log_or_None, verdict_or_exception)``.
    """
    try:
        sim = simulate_recovery(scenario, v, field_)
    except QuadFailure as exc:
        if isinstance(exc.cause, _UNSAFE_CAUSES):
            log.info("v=%.4f unsafe: %s", v, exc)
            return False, None, exc
        raise
    verdict = check_safety(sim, scenario.params.omega_max)
    log.info("v=%.4f safe=%s max rotor %.2f rad/s", v, verdict.safe, verdict.max_rotor_speed)
    return verdict.safe, sim, verdict


def max_safe_speed(scenario: RecoveryScenario, strategy: str = "bisect") -> SpeedSearchResult:
    """Largest common sliding speed whose closed-loop flight keeps every rotor within bounds."""
    field_ = solve_scenario_field(scenario) if scenario.healthy else None
    if strategy == "bisect":
        return _bisect(scenario, field_)
    if strategy == "incremental":
        return _incremental(scenario, field_)
    raise ValueError(f"unknown strategy {strategy!r}")


def _bisect(scenario, field_):
    lo, hi = scenario.v_bounds
    history = []

    ok, sim_lo, info = evaluate_speed(scenario, lo, field_)
    history.append((lo, ok))
    if not ok:
        raise LowerBoundUnsafe(f"lower speed bound {lo} m/s is already unsafe: {info}")
    ok, sim_hi, _ = evaluate_speed(scenario, hi, field_)
    history.append((hi, ok))
    if ok:
        return SpeedSearchResult(hi, sim_hi, len(history), history)

    best = sim_lo
    while hi - lo > scenario.v_tolerance:
        if len(history) >= scenario.max_iterations:
            raise BisectionBudgetExceeded(
                f"bracket [{lo}, {hi}] still wider than {scenario.v_tolerance} "
                f"after {len(history)} simulations")
        mid = 0.5 * (lo + hi)
        ok, sim, _ = evaluate_speed(scenario, mid, field_)
        history.append((mid, ok))
        if ok:
            lo, best = mid, sim
        else:
            hi = mid
    return SpeedSearchResult(lo, best, len(history), history)


def _incremental(scenario, field_):
    """Raise the speed in ``v_tolerance`` steps until the first unsafe run."""
    lo, hi = scenario.v_bounds
    history = []
    ok, best, info = evaluate_speed(scenario, lo, field_)
    history.append((lo, ok))
    if not ok:
        raise LowerBoundUnsafe(f"lower speed bound {lo} m/s is already unsafe: {info}")
    v_best = lo
    budget = int(math.ceil((hi - lo) / scenario.v_tolerance)) + 1
    for k in range(1, budget + 1):
        v = min(lo + k * scenario.v_tolerance, hi)
        ok, sim, _ = evaluate_speed(scenario, v, field_)
        history.append((v, ok))
        if not ok:
            break
        v_best, best = v, sim
        if v >= hi:
            break
    return SpeedSearchResult(v_best, best, len(history), history)
