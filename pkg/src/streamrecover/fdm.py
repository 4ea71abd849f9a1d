"""Finite-difference stream function on a rectangular airspace.

Nodes are stored row-major with ``row`` indexing y and ``col`` indexing x, so
node ``n = row * nx + col`` sits at ``(x_min + col*dx, y_min + row*dy)``.
Every node is one of

* ``BOUNDARY``  - on the rectangle edge, held at ``K * y``,
* ``FAILED``    - interior and inside an obstacle disk, held at the obstacle value,
* ``FREE``      - interior and free, unknown of the discrete Laplace problem.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    InsideObstacle,
    ObstacleTouchesBoundary,
    ObstacleUnresolved,
    OutOfDomain,
    SolverDiverged,
    StagnationPoint,
)
from .flowfield import ObstacleSpec, PlanarPoint, check_disjoint

DIRECT_SOLVE_MAX_NODES = 40_000
CG_TOLERANCE = 1e-10


class NodeKind(enum.IntEnum):
    BOUNDARY = 0
    FAILED = 1
    FREE = 2


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grid needs at least 3 nodes per axis")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid bounds are empty")

    @classmethod
    def from_spacing(cls, x_min, x_max, y_min, y_max, spacing):
        nx = int(round((x_max - x_min) / spacing)) + 1
        ny = int(round((y_max - y_min) / spacing)) + 1
        return cls(x_min, x_max, y_min, y_max, nx, ny)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)

    def mesh(self):
        """Return ``(X, Y)`` arrays of shape ``(ny, nx)``."""
        return np.meshgrid(self.xs, self.ys)

    def contains(self, x, y) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True, eq=False)
class NodeClassification:
    grid: GridSpec
    obstacles: tuple[ObstacleSpec, ...]
    kind: np.ndarray  # (ny, nx) of NodeKind values
    owner: np.ndarray  # (ny, nx) obstacle index for FAILED nodes, -1 elsewhere

    def mask(self, which: NodeKind) -> np.ndarray:
        return self.kind == which

    def count(self, which: NodeKind) -> int:
        return int(np.count_nonzero(self.kind == which))

    def failed_nodes(self) -> set[tuple[int, int]]:
        rows, cols = np.nonzero(self.kind == NodeKind.FAILED)
        return set(zip(rows.tolist(), cols.tolist()))


@dataclass(frozen=True, eq=False)
class StreamFieldGrid:
    grid: GridSpec
    classification: NodeClassification
    psi: np.ndarray  # (ny, nx)
    boundary_gain: float

    def __post_init__(self):
        # Plain lists make scalar lookups in the tracing loop much cheaper.
        object.__setattr__(self, "_rows", self.psi.tolist())

    @property
    def obstacles(self):
        return self.classification.obstacles


def discretize(grid: GridSpec, obstacles: Sequence[ObstacleSpec]) -> NodeClassification:
    obstacles = tuple(obstacles)
    check_disjoint(obstacles)
    X, Y = grid.mesh()
    kind = np.full((grid.ny, grid.nx), NodeKind.FREE, dtype=np.int8)
    kind[0, :] = kind[-1, :] = kind[:, 0] = kind[:, -1] = NodeKind.BOUNDARY
    owner = np.full((grid.ny, grid.nx), -1, dtype=np.int32)
    interior = kind == NodeKind.FREE

    for h, ob in enumerate(obstacles):
        cx, cy, a = ob.center.x, ob.center.y, ob.radius
        if not (grid.x_min < cx - a and cx + a < grid.x_max
                and grid.y_min < cy - a and cy + a < grid.y_max):
            raise ObstacleTouchesBoundary(
                f"obstacle {h} at ({cx}, {cy}) with radius {a} reaches the domain edge")
        inside = interior & ((X - cx) ** 2 + (Y - cy) ** 2 <= a * a)
        if not inside.any():
            raise ObstacleUnresolved(
                f"obstacle {h} at ({cx}, {cy}) with radius {a} contains no grid node; "
                f"refine the grid (dx={grid.dx:g}, dy={grid.dy:g})")
        kind[inside] = NodeKind.FAILED
        owner[inside] = h

    return NodeClassification(grid, obstacles, kind, owner)


def assemble_laplacian(classification: NodeClassification) -> sp.csr_matrix:
    """Sparse ``m x m`` Laplacian of the 5-point stencil graph.

    Only FREE nodes own stencil edges; fixed nodes get empty rows.  Edge
    weights are the stencil coefficients scaled by ``dx*dy`` so that on a
    square grid every edge carries -1 and every FREE diagonal carries 4.
    """
    grid = classification.grid
    nx, ny = grid.nx, grid.ny
    wx = grid.dy / grid.dx
    wy = grid.dx / grid.dy

    rows, cols = np.nonzero(classification.kind == NodeKind.FREE)
    idx = rows * nx + cols
    diag = np.full(idx.size, 2.0 * (wx + wy))

    nbr = [idx - 1, idx + 1, idx - nx, idx + nx]
    wts = [wx, wx, wy, wy]
    I = np.concatenate([idx] + [idx] * 4)
    J = np.concatenate([idx] + nbr)
    V = np.concatenate([diag] + [np.full(idx.size, -w) for w in wts])
    m = nx * ny
    return sp.csr_matrix((V, (I, J)), shape=(m, m))


def boundary_values(classification: NodeClassification, K: float) -> np.ndarray:
    """Prescribed stream values, flattened per node; FREE entries are NaN."""
    if not K > 0:
        raise ValueError("boundary gain K must be positive")
    grid = classification.grid
    _, Y = grid.mesh()
    bc = np.full((grid.ny, grid.nx), np.nan)
    b = classification.kind == NodeKind.BOUNDARY
    bc[b] = K * Y[b]
    for h, ob in enumerate(classification.obstacles):
        bc[classification.owner == h] = 0.0 if ob.psi is None else ob.psi
    return bc.ravel()


def solve_stream(classification: NodeClassification, L: sp.spmatrix, bc: np.ndarray,
                 K: float = 1.0) -> StreamFieldGrid:
    """Solve ``L psi = 0`` with the fixed nodes eliminated.

    ``bc`` holds the prescribed value of every BOUNDARY and FAILED node
    (FREE entries are ignored).  ``K`` is only recorded on the result.
    """
    grid = classification.grid
    free = (classification.kind == NodeKind.FREE).ravel()
    if not free.any():
        raise ValueError("grid has no free interior node")
    fixed = ~free
    bc = np.asarray(bc, dtype=float).ravel()
    if not np.all(np.isfinite(bc[fixed])):
        raise ValueError("boundary data must be finite on every fixed node")

    L = sp.csr_matrix(L)
    fi = np.flatnonzero(free)
    xi = np.flatnonzero(fixed)
    Lcc = L[fi][:, fi].tocsc()
    rhs = -(L[fi][:, xi] @ bc[xi])

    if grid.size <= DIRECT_SOLVE_MAX_NODES:
        psi_c = spla.spsolve(Lcc, rhs)
    else:
        psi_c, info = spla.cg(Lcc, rhs, rtol=CG_TOLERANCE, atol=0.0, maxiter=20 * fi.size)
        if info != 0:
            raise SolverDiverged(f"conjugate gradient stopped with info={info}")

    psi = bc.copy()
    psi[fi] = psi_c
    if not np.all(np.isfinite(psi)):
        raise SolverDiverged("solution contains non-finite values")
    res = np.abs(Lcc @ psi_c - rhs)
    scale = max(np.abs(psi).max(), 1.0)
    if res.size and res.max() > 1e-8 * scale:
        raise SolverDiverged(f"stencil residual {res.max():.3e} above tolerance")
    return StreamFieldGrid(grid, classification, psi.reshape(grid.ny, grid.nx), float(K))


def solve_field(grid: GridSpec, obstacles: Sequence[ObstacleSpec], K: float) -> StreamFieldGrid:
    """Discretize, assemble, apply the boundary values and solve in one go."""
    cls = discretize(grid, obstacles)
    return solve_stream(cls, assemble_laplacian(cls), boundary_values(cls, K), K)


def stencil_residual(field: StreamFieldGrid) -> np.ndarray:
    """``N + S + E + W - 4 C`` (square-grid form) at every FREE node."""
    P = field.psi
    r = P[2:, 1:-1] + P[:-2, 1:-1] + P[1:-1, 2:] + P[1:-1, :-2] - 4.0 * P[1:-1, 1:-1]
    free = field.classification.kind[1:-1, 1:-1] == NodeKind.FREE
    return r[free]


# -- sampling ----------------------------------------------------------------

def _interp(field: StreamFieldGrid, x: float, y: float) -> float:
    g = field.grid
    fx = (x - g.x_min) / g.dx
    fy = (y - g.y_min) / g.dy
    i = min(max(int(math.floor(fx)), 0), g.nx - 2)
    j = min(max(int(math.floor(fy)), 0), g.ny - 2)
    tx = fx - i
    ty = fy - j
    lo = field._rows[j]
    hi = field._rows[j + 1]
    return ((1 - tx) * (1 - ty) * lo[i] + tx * (1 - ty) * lo[i + 1]
            + (1 - tx) * ty * hi[i] + tx * ty * hi[i + 1])


def _check_point(field: StreamFieldGrid, x: float, y: float) -> None:
    g = field.grid
    if not g.contains(x, y):
        raise OutOfDomain(f"point ({x}, {y}) lies outside the domain")
    for h, ob in enumerate(field.obstacles):
        if ob.contains(x, y):
            raise InsideObstacle(f"point ({x}, {y}) lies inside obstacle {h}")


def sample_psi(field: StreamFieldGrid, point: PlanarPoint) -> float:
    """Bilinear interpolation of the nodal stream function."""
    _check_point(field, point.x, point.y)
    return _interp(field, point.x, point.y)


def _gradient(field: StreamFieldGrid, x: float, y: float) -> tuple[float, float]:
    g = field.grid
    h = 0.5 * min(g.dx, g.dy)
    xp, xm = min(x + h, g.x_max), max(x - h, g.x_min)
    yp, ym = min(y + h, g.y_max), max(y - h, g.y_min)
    dpdx = (_interp(field, xp, y) - _interp(field, xm, y)) / (xp - xm)
    dpdy = (_interp(field, x, yp) - _interp(field, x, ym)) / (yp - ym)
    return dpdx, dpdy


def stagnation_threshold(field: StreamFieldGrid) -> float:
    return 1e-6 * field.boundary_gain * field.grid.dy


def sample_velocity_direction(field: StreamFieldGrid, point: PlanarPoint,
                              eps_stag: float | None = None) -> tuple[float, float]:
    """Unit vector along ``(dpsi/dy, -dpsi/dx)``, the local streamline direction."""
    _check_point(field, point.x, point.y)
    return _direction(field, point.x, point.y, eps_stag)


def _direction(field, x, y, eps_stag=None):
    dpdx, dpdy = _gradient(field, x, y)
    norm = math.hypot(dpdx, dpdy)
    if eps_stag is None:
        eps_stag = stagnation_threshold(field)
    if norm < eps_stag:
        raise StagnationPoint(f"|grad psi| = {norm:.3e} at ({x}, {y})")
    return dpdy / norm, -dpdx / norm


# -- field file --------------------------------------------------------------

def write_field(field: StreamFieldGrid, path) -> None:
    """Text grid file: a ``key value`` header block, then one row of psi per line.

    Rows run from ``y_min`` upwards, columns from ``x_min`` rightwards.
    """
    g = field.grid
    with open(path, "w") as fh:
        fh.write(f"x_min {g.x_min!r}\nx_max {g.x_max!r}\n")
        fh.write(f"y_min {g.y_min!r}\ny_max {g.y_max!r}\n")
        fh.write(f"nx {g.nx}\nny {g.ny}\nK {field.boundary_gain!r}\n")
        fh.write("data\n")
        for row in field.psi:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_field(path):
    """Read a field file back as ``(GridSpec, K, psi)``."""
    header = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line == "data":
                break
            key, value = line.split()
            header[key] = value
        psi = np.loadtxt(fh, ndmin=2)
    grid = GridSpec(float(header["x_min"]), float(header["x_max"]),
                    float(header["y_min"]), float(header["y_max"]),
                    int(header["nx"]), int(header["ny"]))
    if psi.shape != (grid.ny, grid.nx):
        raise ValueError(f"field data has shape {psi.shape}, header says {(grid.ny, grid.nx)}")
    return grid, float(header["K"]), psi
