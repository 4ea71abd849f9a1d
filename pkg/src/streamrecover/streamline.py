"""Streamline tracing through a solved field and smooth reference fitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline, make_lsq_spline

from .errors import DriftExceeded, FitToleranceExceeded
from .fdm import StreamFieldGrid, _direction, _gradient, _interp, sample_psi
from .flowfield import PlanarPoint

FIT_TOLERANCE = 0.05
SEGMENT_DURATION = 2.0
SPLINE_DEGREE = 5


@dataclass(frozen=True)
class TraceConfig:
    step_dt: float
    horizon: float
    psi_drift_tolerance: float
    project: bool = True

    def __post_init__(self):
        if not (self.step_dt > 0 and self.horizon > 0):
            raise ValueError("step_dt and horizon must be positive")

    @classmethod
    def for_field(cls, field: StreamFieldGrid, speed: float, horizon: float, **kw):
        """Default config: quarter-cell steps and a drift budget of 1e-3*K*dy."""
        g = field.grid
        step = min(g.dx, g.dy) / (4.0 * speed)
        tol = 1e-3 * field.boundary_gain * g.dy
        return cls(step, horizon, tol, **kw)


@dataclass(frozen=True, eq=False)
class PlanarPath:
    times: np.ndarray
    points: np.ndarray  # (n, 2)
    psi_0: float

    def __len__(self):
        return len(self.times)

    def psi_drift(self, field: StreamFieldGrid) -> np.ndarray:
        return np.array([_interp(field, x, y) for x, y in self.points]) - self.psi_0


def assign_stream_value(field: StreamFieldGrid, start: PlanarPoint) -> float:
    return sample_psi(field, start)


def _project(field, x, y, psi_0, tol, max_iter=8):
    # Newton steps along the gradient back onto the psi_0 level set.
    for _ in range(max_iter):
        err = _interp(field, x, y) - psi_0
        if abs(err) <= tol:
            break
        gx, gy = _gradient(field, x, y)
        g2 = gx * gx + gy * gy
        if g2 == 0.0:
            break
        x -= err * gx / g2
        y -= err * gy / g2
    return x, y


def trace(field: StreamFieldGrid, start: PlanarPoint, speed: float, cfg: TraceConfig) -> PlanarPath:
    """Integrate ``dr/dt = speed * unit streamline direction`` with classical RK4.

    Stops at ``cfg.horizon`` or when the next step would leave the domain.
    """
    if not speed > 0:
        raise ValueError("sliding speed must be positive")
    psi_0 = assign_stream_value(field, start)
    g = field.grid
    n = max(1, int(round(cfg.horizon / cfg.step_dt)))
    dt = cfg.horizon / n

    def rhs(x, y):
        # Stage points may straddle the edge; clamp them into the domain.
        x = min(max(x, g.x_min), g.x_max)
        y = min(max(y, g.y_min), g.y_max)
        ux, uy = _direction(field, x, y)
        return speed * ux, speed * uy

    xs = [start.x]
    ys = [start.y]
    x, y = start.x, start.y
    for _ in range(n):
        k1 = rhs(x, y)
        k2 = rhs(x + 0.5 * dt * k1[0], y + 0.5 * dt * k1[1])
        k3 = rhs(x + 0.5 * dt * k2[0], y + 0.5 * dt * k2[1])
        k4 = rhs(x + dt * k3[0], y + dt * k3[1])
        xn = x + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        yn = y + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not g.contains(xn, yn):
            break
        if cfg.project:
            xn, yn = _project(field, xn, yn, psi_0, 1e-3 * cfg.psi_drift_tolerance)
            if not g.contains(xn, yn):
                break
        drift = abs(_interp(field, xn, yn) - psi_0)
        if drift > cfg.psi_drift_tolerance:
            raise DriftExceeded(
                f"psi drift {drift:.3e} exceeds {cfg.psi_drift_tolerance:.3e} "
                f"at ({xn:.4f}, {yn:.4f}); reduce step_dt or refine the grid")
        x, y = xn, yn
        xs.append(x)
        ys.append(y)

    times = dt * np.arange(len(xs))
    return PlanarPath(times, np.column_stack([xs, ys]), psi_0)


class ReferenceTrajectory:
    """Planar spline reference at constant altitude.

    ``derivatives(t)`` returns a ``(5, 3)`` array whose row ``k`` is the
    ``k``-th time derivative of the position (rows 0-4: position to snap).
    """

    def __init__(self, x_spline: BSpline, y_spline: BSpline, z0: float, t0: float, t1: float):
        self.z0 = float(z0)
        self.t0 = float(t0)
        self.t1 = float(t1)
        self._splines = [[s.derivative(k) if k else s for k in range(5)]
                         for s in (x_spline, y_spline)]

    @property
    def duration(self):
        return self.t1 - self.t0

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        slack = 1e-9 * max(1.0, abs(self.t1))
        if np.any(t < self.t0 - slack) or np.any(t > self.t1 + slack):
            raise ValueError(f"time outside reference validity [{self.t0}, {self.t1}]")
        return np.clip(t, self.t0, self.t1)

    def derivatives(self, t: float) -> np.ndarray:
        t = float(self._check(t))
        out = np.zeros((5, 3))
        for axis in range(2):
            for k in range(5):
                out[k, axis] = self._splines[axis][k](t)
        out[0, 2] = self.z0
        return out

    def derivatives_many(self, ts) -> np.ndarray:
        """Vectorised ``derivatives`` over a time array; shape ``(n, 5, 3)``."""
        ts = self._check(ts)
        out = np.zeros((ts.size, 5, 3))
        for axis in range(2):
            for k in range(5):
                out[:, k, axis] = self._splines[axis][k](ts)
        out[:, 0, 2] = self.z0
        return out

    def position(self, t):
        return self.derivatives(t)[0]


class PolynomialReference:
    """Reference given by per-axis polynomials in time (coefficients highest first)."""

    def __init__(self, coeffs_xyz, t0=0.0, t1=math.inf):
        self.t0 = float(t0)
        self.t1 = float(t1)
        self._polys = [[np.polyder(np.poly1d(c), k) if k else np.poly1d(c) for k in range(5)]
                       for c in coeffs_xyz]

    def derivatives(self, t):
        return np.array([[p[k](t) for p in self._polys] for k in range(5)], dtype=float)

    def derivatives_many(self, ts):
        ts = np.asarray(ts, dtype=float)
        return np.stack([np.stack([p[k](ts) for p in self._polys], axis=-1)
                         for k in range(5)], axis=1)

    @classmethod
    def hover(cls, position):
        return cls([[float(c)] for c in position])


def fit_reference(path: PlanarPath, z0: float, segment_duration: float = SEGMENT_DURATION,
                  tolerance: float = FIT_TOLERANCE) -> ReferenceTrajectory:
    """Least-squares quintic spline through the path samples.

    Knots are spaced ``segment_duration`` apart, so each segment is a quintic
    and joints are C4 continuous.
    """
    n = len(path)
    if n < 8:
        raise ValueError(f"need at least 8 path samples, got {n}")
    t = np.asarray(path.times, dtype=float)
    t0, t1 = t[0], t[-1]
    nseg = max(1, int(math.ceil((t1 - t0) / segment_duration - 1e-9)))
    # The coefficient count must not exceed the sample count.
    nseg = min(nseg, n - SPLINE_DEGREE - 1)
    k = SPLINE_DEGREE
    inner = np.linspace(t0, t1, nseg + 1)[1:-1]
    knots = np.concatenate([[t0] * (k + 1), inner, [t1] * (k + 1)])

    splines = []
    worst = 0.0
    for axis in range(2):
        vals = path.points[:, axis]
        s = make_lsq_spline(t, vals, knots, k=k)
        worst = max(worst, float(np.max(np.abs(s(t) - vals))))
        splines.append(s)
    if worst > tolerance:
        raise FitToleranceExceeded(
            f"max fit deviation {worst:.4f} m exceeds {tolerance} m; "
            f"shorten segment_duration (now {segment_duration} s)")
    return ReferenceTrajectory(splines[0], splines[1], z0, t0, t1)


def write_path_csv(path: PlanarPath, filename) -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y"])
        for t, (x, y) in zip(path.times, path.points):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])


def read_path_csv(filename, psi_0=float("nan")) -> PlanarPath:
    data = np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2)
    return PlanarPath(data[:, 0], data[:, 1:3], psi_0)

