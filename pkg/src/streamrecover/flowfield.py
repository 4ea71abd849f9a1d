"""Closed-form ideal flow: a uniform stream superposed with one doublet per obstacle.

The complex potential is

    f(z) = u_inf * sum_h (z - z_h + a_h**2 / (z - z_h))

whose real part is the velocity potential and imaginary part the stream
function.  With a single obstacle the circle |z - z_h| = a_h is the zero
streamline; with several the bounding streamlines are no longer circles, so
this backend serves as a test oracle and for single-obstacle planning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import PoleSingularity

POLE_EPS = 1e-9


@dataclass(frozen=True)
class PlanarPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def as_complex(self) -> complex:
        return complex(self.x, self.y)


@dataclass(frozen=True)
class ObstacleSpec:
    """Unsafe disk wrapping a failed vehicle.

    ``psi`` optionally overrides the stream value held on the grid nodes inside
    the disk (the default, ``None``, keeps it at zero).
    """

    center: PlanarPoint
    radius: float
    psi: float | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")

    def contains(self, x, y):
        return (x - self.center.x) ** 2 + (y - self.center.y) ** 2 <= self.radius**2


def check_disjoint(obstacles: Sequence[ObstacleSpec]) -> None:
    for i, a in enumerate(obstacles):
        for b in obstacles[i + 1:]:
            d = np.hypot(a.center.x - b.center.x, a.center.y - b.center.y)
            if d <= a.radius + b.radius:
                raise ValueError(f"obstacle disks overlap: {a} and {b}")


@dataclass(frozen=True)
class AnalyticFlow:
    freestream: float
    obstacles: tuple[ObstacleSpec, ...]

    def __post_init__(self):
        if not self.freestream > 0:
            raise ValueError("freestream speed must be positive")
        if len(self.obstacles) == 0:
            raise ValueError("at least one obstacle is required")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        check_disjoint(self.obstacles)


def _offsets(flow: AnalyticFlow, z: complex) -> list[complex]:
    out = []
    for ob in flow.obstacles:
        dz = z - ob.center.as_complex()
        if abs(dz) < POLE_EPS:
            raise PoleSingularity(f"query at doublet center ({ob.center.x}, {ob.center.y})")
        out.append(dz)
    return out


def complex_potential(flow: AnalyticFlow, point: PlanarPoint) -> complex:
    z = point.as_complex()
    total = 0j
    for ob, dz in zip(flow.obstacles, _offsets(flow, z)):
        total += dz + ob.radius**2 / dz
    return flow.freestream * total


def eval_potential(flow: AnalyticFlow, point: PlanarPoint) -> tuple[float, float]:
    """Return ``(phi, psi)`` at ``point``."""
    f = complex_potential(flow, point)
    return f.real, f.imag


def eval_velocity(flow: AnalyticFlow, point: PlanarPoint) -> tuple[float, float]:
    """Return the flow velocity ``(u, v) = (Re f', -Im f')`` at ``point``."""
    z = point.as_complex()
    df = 0j
    for ob, dz in zip(flow.obstacles, _offsets(flow, z)):
        df += 1.0 - ob.radius**2 / dz**2
    df *= flow.freestream
    return df.real, -df.imag


def psi_grid(flow: AnalyticFlow, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorised stream function on arrays of coordinates.

    Points closer than ``POLE_EPS`` to a center come back as NaN instead of
    raising, which suits filling boundary data on a grid.
    """
    z = np.asarray(x, dtype=float) + 1j * np.asarray(y, dtype=float)
    total = np.zeros(z.shape, dtype=complex)
    for ob in flow.obstacles:
        dz = z - ob.center.as_complex()
        bad = np.abs(dz) < POLE_EPS
        dz = np.where(bad, np.nan, dz)
        with np.errstate(invalid="ignore"):
            total += dz + ob.radius**2 / dz
    return flow.freestream * total.imag
