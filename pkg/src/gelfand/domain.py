"""Discrete domains for the Gelfand problem.

Three families are supported: an interval, a ball of any dimension reduced to
its radial profile, and a 2D ellipse on a Cartesian lattice with
Shortley-Weller cut arms.  Every grid carries its discrete Laplacian as a
sparse matrix whose rows are populated for interior nodes only.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

RADIAL_MIN_RES, RADIAL_MAX_RES = 8, 4097
PLANAR_MIN_RES, PLANAR_MAX_RES = 16, 513


class DomainKind(enum.Enum):
    INTERVAL = "interval"
    BALL = "ball"
    ELLIPSE = "ellipse"


class NodeClass(enum.IntEnum):
    INTERIOR = 0
    BOUNDARY = 1
    # reserved: none of the current families needs ghost nodes
    GHOST = 2


@dataclass(frozen=True)
class DomainSpec:
    kind: DomainKind
    length: float | None = None
    dim: int | None = None
    radius: float | None = None
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        kind = DomainKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is DomainKind.INTERVAL:
            if self.length is None or not self.length > 0:
                raise ValueError("interval length must be > 0")
        elif kind is DomainKind.BALL:
            if self.dim is None or int(self.dim) != self.dim or self.dim < 1:
                raise ValueError("dimension must be ≥ 1")
            if self.radius is None or not self.radius > 0:
                raise ValueError("ball radius must be > 0")
            object.__setattr__(self, "dim", int(self.dim))
        else:
            if self.a is None or self.b is None or not (self.a > 0 and self.b > 0):
                raise ValueError("ellipse semi-axes must be > 0")
            if self.a < self.b:
                raise ValueError("require a ≥ b")

    @classmethod
    def interval(cls, length=1.0):
        return cls(DomainKind.INTERVAL, length=float(length))

    @classmethod
    def ball(cls, dim, radius=1.0):
        return cls(DomainKind.BALL, dim=dim, radius=float(radius))

    @classmethod
    def ellipse(cls, a, b):
        return cls(DomainKind.ELLIPSE, a=float(a), b=float(b))

    @property
    def space_dim(self) -> int:
        if self.kind is DomainKind.BALL:
            return self.dim
        return 1 if self.kind is DomainKind.INTERVAL else 2

    def volume(self) -> float:
        if self.kind is DomainKind.INTERVAL:
            return self.length
        if self.kind is DomainKind.BALL:
            n = self.dim
            return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * self.radius**n
        return math.pi * self.a * self.b

    def as_dict(self) -> dict:
        d = {"kind": self.kind.value}
        for key in ("length", "dim", "radius", "a", "b"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        return d


@dataclass(frozen=True, eq=False)
class Grid:
    """Nodes, classification, Laplacian and boundary metadata of a domain.

    ``coords`` has one column for line grids (x for the interval, r for the
    ball) and two for the ellipse.  Boundary metadata arrays are aligned with
    ``boundary`` (the boundary node indices, in order).
    """

    spec: DomainSpec
    resolution: int
    h: float
    coords: np.ndarray
    node_class: np.ndarray
    lap: sp.csr_matrix
    weights: np.ndarray
    normals: np.ndarray
    curvature: np.ndarray
    arc: np.ndarray
    # ellipse only
    lattice: np.ndarray | None = None
    lattice_index: dict | None = None
    arms: np.ndarray | None = None
    arm_fraction: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.spec.space_dim

    @property
    def is_line(self) -> bool:
        return self.spec.kind is not DomainKind.ELLIPSE

    @property
    def interior(self) -> np.ndarray:
        if "interior" not in self._cache:
            self._cache["interior"] = np.flatnonzero(self.node_class == NodeClass.INTERIOR)
        return self._cache["interior"]

    @property
    def boundary(self) -> np.ndarray:
        if "boundary" not in self._cache:
            self._cache["boundary"] = np.flatnonzero(self.node_class == NodeClass.BOUNDARY)
        return self._cache["boundary"]

    @property
    def lap_ii(self) -> sp.csc_matrix:
        """Laplacian restricted to interior unknowns (zero boundary data)."""
        if "lap_ii" not in self._cache:
            idx = self.interior
            self._cache["lap_ii"] = self.lap[idx][:, idx].tocsc()
        return self._cache["lap_ii"]

    @property
    def lap_ib(self) -> sp.csr_matrix:
        if "lap_ib" not in self._cache:
            self._cache["lap_ib"] = self.lap[self.interior][:, self.boundary].tocsr()
        return self._cache["lap_ib"]

    def zeros(self) -> "ScalarField":
        return ScalarField(self, np.zeros(self.n_nodes))

    def field(self, func) -> "ScalarField":
        """Sample ``func`` on the nodes; it receives one array per coordinate."""
        vals = func(*self.coords.T)
        return ScalarField(self, np.broadcast_to(np.asarray(vals, dtype=float), (self.n_nodes,)).copy())

    def from_interior(self, values, boundary_value=0.0) -> "ScalarField":
        out = np.full(self.n_nodes, float(boundary_value))
        out[self.interior] = values
        return ScalarField(self, out)

    def radius_of_nodes(self) -> np.ndarray:
        """Distance of each node from the domain centre."""
        if self.spec.kind is DomainKind.INTERVAL:
            return np.abs(self.coords[:, 0] - 0.5 * self.spec.length)
        return np.linalg.norm(self.coords, axis=1)

    def metadata(self) -> dict:
        return {
            "domain": self.spec.as_dict(),
            "resolution": self.resolution,
            "h": self.h,
            "n_nodes": int(self.n_nodes),
            "n_interior": int(self.interior.size),
            "n_boundary": int(self.boundary.size),
        }


class ScalarField:
    """Grid-sampled function.  Values are read-only once constructed."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        vals = np.array(values, dtype=float)
        if vals.shape != (grid.n_nodes,):
            raise ValueError(f"field has shape {vals.shape}, grid has {grid.n_nodes} nodes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.flags.writeable = False
        self.grid = grid
        self.values = vals

    @property
    def interior(self) -> np.ndarray:
        return self.values[self.grid.interior]

    @property
    def on_boundary(self) -> np.ndarray:
        return self.values[self.grid.boundary]

    def max(self) -> float:
        return float(self.values.max())

    def copy_with(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __repr__(self):
        return f"ScalarField(n={self.values.size}, max={self.values.max():.6g})"


def _check_resolution(res, lo, hi):
    if int(res) != res:
        raise ValueError("resolution must be an integer")
    if not lo <= res <= hi:
        raise ValueError(f"resolution must lie in [{lo}, {hi}], got {res}")


def build_grid(spec: DomainSpec, resolution: int) -> Grid:
    """Discretize ``spec``.

    Line grids (interval, ball) have ``resolution`` nodes including the
    boundary, so h = length/(resolution-1) or radius/(resolution-1).  The
    ellipse lattice has spacing h = 2a/(resolution-1) on both axes.
    """
    if spec.kind is DomainKind.ELLIPSE:
        _check_resolution(resolution, PLANAR_MIN_RES, PLANAR_MAX_RES)
        return _ellipse_grid(spec, int(resolution))
    _check_resolution(resolution, RADIAL_MIN_RES, RADIAL_MAX_RES)
    if spec.kind is DomainKind.INTERVAL:
        return _interval_grid(spec, int(resolution))
    return _ball_grid(spec, int(resolution))


def _interval_grid(spec, res):
    L = spec.length
    h = L / (res - 1)
    x = np.linspace(0.0, L, res)
    cls = np.full(res, NodeClass.INTERIOR, dtype=np.int8)
    cls[[0, -1]] = NodeClass.BOUNDARY
    i = np.arange(1, res - 1)
    rows = np.concatenate([i, i, i])
    cols = np.concatenate([i - 1, i, i + 1])
    vals = np.concatenate([np.ones(i.size), -2 * np.ones(i.size), np.ones(i.size)]) / h**2
    lap = sp.csr_matrix((vals, (rows, cols)), shape=(res, res))
    w = np.full(res, h)
    w[[0, -1]] = h / 2
    return Grid(spec, res, h, x[:, None], cls, lap, w,
                normals=np.array([[-1.0], [1.0]]), curvature=np.zeros(2),
                arc=np.array([0.0, L]))


def _sphere_area(n):
    # |S^{n-1}|
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def _ball_grid(spec, res):
    n, R = spec.dim, spec.radius
    h = R / (res - 1)
    r = np.linspace(0.0, R, res)
    cls = np.full(res, NodeClass.INTERIOR, dtype=np.int8)
    cls[-1] = NodeClass.BOUNDARY
    # Finite-volume form of phi'' + (n-1)/r phi' on dual cells [r-h/2, r+h/2]:
    #   (A+ (f_{i+1}-f_i) - A- (f_i-f_{i-1})) / (h V_i),  A = r^{n-1}, V = (r+^n - r-^n)/n.
    # At r = 0 the cell is [0, h/2] and this reduces to 2n (f_1 - f_0)/h^2,
    # the discrete form of the limit Δf(0) = n f''(0).  Exact for |x|^2.
    r_plus = np.minimum(r + h / 2, R)
    r_minus = np.maximum(r - h / 2, 0.0)
    vol = (r_plus**n - r_minus**n) / n
    a_plus = r_plus ** (n - 1)
    a_minus = np.where(r_minus > 0, r_minus ** (n - 1), 0.0)  # no flux through r = 0 (also for n = 1)
    i = np.arange(0, res - 1)
    diag_up = a_plus[i] / (h * vol[i])
    diag_lo = a_minus[i] / (h * vol[i])
    rows = np.concatenate([i, i, i[1:]])
    cols = np.concatenate([i + 1, i, i[1:] - 1])
    vals = np.concatenate([diag_up, -(diag_up + diag_lo), diag_lo[1:]])
    lap = sp.csr_matrix((vals, (rows, cols)), shape=(res, res))
    w = _sphere_area(n) * vol
    return Grid(spec, res, h, r[:, None], cls, lap, w,
                normals=np.array([[1.0]]), curvature=np.array([1.0 / R]),
                arc=np.array([0.0]))


def ellipse_curvature(a, b, t):
    """Curvature of (a cos t, b sin t)."""
    return a * b / (a**2 * np.sin(t) ** 2 + b**2 * np.cos(t) ** 2) ** 1.5


def ellipse_normal(a, b, x, y):
    nx, ny = x / a**2, y / b**2
    norm = np.hypot(nx, ny)
    return np.stack([nx / norm, ny / norm], axis=-1)


_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))  # E, W, N, S


def _ellipse_grid(spec, res):
    a, b = spec.a, spec.b
    h = 2 * a / (res - 1)
    # symmetric lattice about the origin; offset 0 or 1/2 depending on parity
    off = 0.0 if res % 2 == 1 else 0.5
    kx = int(np.floor(a / h - off)) + 1
    ky = int(np.floor(b / h - off)) + 1
    ivals = np.arange(-kx - 1, kx + 1)
    jvals = np.arange(-ky - 1, ky + 1)
    level_tol = 1e-10

    def level(x, y):
        return x**2 / a**2 + y**2 / b**2

    lattice = []
    for j in jvals:
        for i in ivals:
            x, y = (i + off) * h, (j + off) * h
            if level(x, y) < 1 - level_tol:
                lattice.append((i, j))
    lattice = np.array(lattice, dtype=int)
    index = {(int(i), int(j)): k for k, (i, j) in enumerate(lattice)}
    n_int = len(lattice)
    coords = [((i + off) * h, (j + off) * h) for i, j in lattice]

    arms = np.ones((n_int, 4))
    neighbor = np.full((n_int, 4), -1, dtype=int)
    bnodes = {}
    b_coords, b_frac = [], []
    for k, (i, j) in enumerate(lattice):
        x0, y0 = coords[k]
        for d, (di, dj) in enumerate(_DIRS):
            nb = index.get((int(i + di), int(j + dj)))
            if nb is not None:
                neighbor[k, d] = nb
                continue
            # crossing of the segment p + s h e, s in (0, 1], with the ellipse
            if di:
                qa, qb, qc = (h / a) ** 2, 2 * x0 * di * h / a**2, level(x0, y0) - 1
            else:
                qa, qb, qc = (h / b) ** 2, 2 * y0 * dj * h / b**2, level(x0, y0) - 1
            s = (-qb + math.sqrt(qb * qb - 4 * qa * qc)) / (2 * qa)
            s = min(max(s, 1e-12), 1.0)
            arms[k, d] = s
            bx, by = x0 + di * s * h, y0 + dj * s * h
            key = (round(bx / h, 9), round(by / h, 9))
            if key not in bnodes:
                bnodes[key] = n_int + len(b_coords)
                b_coords.append((bx, by))
                b_frac.append(s)
            neighbor[k, d] = bnodes[key]

    all_coords = np.array(coords + b_coords)
    n_tot = all_coords.shape[0]
    cls = np.full(n_tot, NodeClass.BOUNDARY, dtype=np.int8)
    cls[:n_int] = NodeClass.INTERIOR

    # Shortley-Weller: f_xx ~ 2/h^2 [f_E/(tE(tE+tW)) + f_W/(tW(tE+tW)) - f_P/(tE tW)]
    rows, cols, vals = [], [], []
    for axis in (0, 1):
        tp, tm = arms[:, 2 * axis], arms[:, 2 * axis + 1]
        kk = np.arange(n_int)
        cp = 2 / (h**2 * tp * (tp + tm))
        cm = 2 / (h**2 * tm * (tp + tm))
        c0 = -2 / (h**2 * tp * tm)
        rows += [kk, kk, kk]
        cols += [neighbor[:, 2 * axis], neighbor[:, 2 * axis + 1], kk]
        vals += [cp, cm, c0]
    lap = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n_tot, n_tot))
    lap.sum_duplicates()

    w = np.zeros(n_tot)
    fx = 0.5 * (arms[:, 0] + arms[:, 1])
    fy = 0.5 * (arms[:, 2] + arms[:, 3])
    w[:n_int] = h * h * fx * fy

    bc = np.array(b_coords)
    normals = ellipse_normal(a, b, bc[:, 0], bc[:, 1])
    t = np.arctan2(bc[:, 1] / b, bc[:, 0] / a)
    curv = ellipse_curvature(a, b, t)
    order_arc = t

    grid = Grid(spec, res, h, all_coords, cls, lap, w, normals=normals,
                curvature=curv, arc=order_arc, lattice=lattice,
                lattice_index=index, arms=arms, arm_fraction=np.array(b_frac))
    grid._cache["neighbor"] = neighbor
    grid._cache["offset"] = off
    return grid


def discrete_laplacian(grid: Grid, f: ScalarField) -> ScalarField:
    """Discrete Laplacian of ``f`` at interior nodes (zero at boundary nodes)."""
    if f.grid is not grid:
        raise ValueError("field belongs to a different grid")
    out = np.zeros(grid.n_nodes)
    out[grid.interior] = (grid.lap @ f.values)[grid.interior]
    return ScalarField(grid, out)


@dataclass(frozen=True)
class BoundaryGeometry:
    normals: np.ndarray
    mean_curvature: np.ndarray
    r_omega: float
    R_omega: float


def boundary_geometry(grid: Grid) -> BoundaryGeometry:
    """Outward normals, mean curvature and the inner/outer touching radii.

    For the ellipse the smallest inner touching radius is the minimal
    radius of curvature b^2/a and the largest outer one is a^2/b.
    """
    spec = grid.spec
    if spec.kind is DomainKind.INTERVAL:
        r_in = R_out = spec.length / 2
    elif spec.kind is DomainKind.BALL:
        r_in = R_out = spec.radius
    else:
        r_in, R_out = spec.b**2 / spec.a, spec.a**2 / spec.b
    return BoundaryGeometry(grid.normals, grid.curvature, r_in, R_out)


def gradient(grid: Grid, values) -> np.ndarray:
    """Second-order gradient at interior nodes, shape (n_interior, d).

    On line grids this is the derivative in x (interval) or r (ball); on the
    ellipse, uneven Shortley-Weller arms use the three-point formula for
    non-uniform spacing.
    """
    f = np.asarray(values, dtype=float)
    h = grid.h
    if grid.is_line:
        idx = grid.interior
        g = np.empty(idx.size)
        if grid.spec.kind is DomainKind.BALL:
            g[0] = 0.0
            inner = idx[1:]
            g[1:] = (f[inner + 1] - f[inner - 1]) / (2 * h)
        else:
            g[:] = (f[idx + 1] - f[idx - 1]) / (2 * h)
        return g[:, None]
    nb = grid._cache["neighbor"]
    arms = grid.arms
    n_int = grid.interior.size
    fp = f[:n_int]
    out = np.empty((n_int, 2))
    for axis in (0, 1):
        tp, tm = arms[:, 2 * axis], arms[:, 2 * axis + 1]
        fplus, fminus = f[nb[:, 2 * axis]], f[nb[:, 2 * axis + 1]]
        out[:, axis] = (tm**2 * (fplus - fp) + tp**2 * (fp - fminus)) / (tp * tm * (tp + tm) * h)
    return out


def integrate(grid: Grid, values) -> float:
    return float(np.dot(grid.weights, values))
