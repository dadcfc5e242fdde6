"""f-convexity diagnostics: w = e^{-u/2}, its Hessian, and boundary quantities."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .domain import DomainKind, Grid, ScalarField, boundary_geometry

MAX_EXCLUDED_FRACTION = 0.05
FIT_RADIUS = 3.0  # in units of h


class DegenerateNormalDerivative(ValueError):
    pass


def to_w(u: ScalarField) -> ScalarField:
    w = np.exp(-0.5 * u.values)
    w[u.grid.boundary] = 1.0
    return ScalarField(u.grid, w)


def conv_tol(w: ScalarField) -> float:
    return 10.0 * w.grid.h**2 * float(np.abs(w.values).max())


# -- local polynomial fits (ellipse) ---------------------------------------

_CUBIC = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)]


def _tree(grid: Grid) -> cKDTree:
    if "tree" not in grid._cache:
        grid._cache["tree"] = cKDTree(grid.coords)
    return grid._cache["tree"]


def local_fit(grid: Grid, values, point, radius=FIT_RADIUS):
    """Least-squares cubic through nodes within ``radius``·h of ``point``.

    Returns (value, gradient, Hessian) at ``point``, or None when the
    neighbourhood cannot determine a cubic.
    """
    h = grid.h
    idx = _tree(grid).query_ball_point(point, radius * h)
    if len(idx) < 14:
        return None
    d = (grid.coords[idx] - point) / h
    V = np.stack([d[:, 0] ** p * d[:, 1] ** q for p, q in _CUBIC], axis=1)
    # mild distance weighting keeps the fit local
    wts = np.exp(-0.5 * (np.hypot(d[:, 0], d[:, 1]) / radius) ** 2)
    A = V * wts[:, None]
    coef, _, rank, sv = np.linalg.lstsq(A, np.asarray(values)[idx] * wts, rcond=None)
    if rank < len(_CUBIC) or sv[-1] < 1e-6 * sv[0]:
        return None
    c = coef
    grad = np.array([c[1], c[2]]) / h
    hess = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]]) / h**2
    return c[0], grad, hess


# -- Hessian eigenvalue field ----------------------------------------------

class HessianEigs(NamedTuple):
    eig: ScalarField
    valid: np.ndarray  # boolean over grid.interior
    n_excluded: int


def hessian_min_eig_field(w: ScalarField) -> HessianEigs:
    """Smallest eigenvalue of the discrete Hessian of ``w`` at interior nodes.

    Interval: w''.  Ball: the radial second derivative and the tangential
    curvature term w_r/r (both equal w''(0) at the centre).  Ellipse: the
    centred 2x2 Hessian where the full 3x3 block of lattice neighbours is
    interior, a local cubic fit elsewhere; nodes where the fit is not
    determined are excluded and counted.
    """
    grid = w.grid
    f = w.values
    h = grid.h
    out = np.zeros(grid.n_nodes)
    idx = grid.interior
    valid = np.ones(idx.size, dtype=bool)
    if grid.is_line:
        if grid.spec.kind is DomainKind.INTERVAL:
            out[idx] = (f[idx + 1] - 2 * f[idx] + f[idx - 1]) / h**2
        else:
            r = grid.coords[:, 0]
            wrr = np.empty(idx.size)
            wrr[0] = 2 * (f[1] - f[0]) / h**2
            inner = idx[1:]
            wrr[1:] = (f[inner + 1] - 2 * f[inner] + f[inner - 1]) / h**2
            if grid.dim == 1:
                out[idx] = wrr
            else:
                tang = np.empty(idx.size)
                tang[0] = wrr[0]
                tang[1:] = (f[inner + 1] - f[inner - 1]) / (2 * h * r[inner])
                out[idx] = np.minimum(wrr, tang)
        return HessianEigs(ScalarField(grid, out), valid, 0)

    index = grid.lattice_index
    for k, (i, j) in enumerate(grid.lattice):
        nbrs = [index.get((int(i + di), int(j + dj))) for di in (-1, 0, 1) for dj in (-1, 0, 1)]
        if all(n is not None for n in nbrs):
            (mm, m0, mp, _0m, _00, _0p, pm, p0, pp) = (f[n] for n in nbrs)
            wxx = (p0 - 2 * _00 + m0) / h**2
            wyy = (_0p - 2 * _00 + _0m) / h**2
            wxy = (pp - pm - mp + mm) / (4 * h**2)
            H = np.array([[wxx, wxy], [wxy, wyy]])
        else:
            fit = local_fit(grid, f, grid.coords[k])
            if fit is None:
                valid[k] = False
                continue
            H = fit[2]
        out[k] = np.linalg.eigvalsh(H)[0]
    n_bad = int((~valid).sum())
    if n_bad > MAX_EXCLUDED_FRACTION * idx.size:
        raise ValueError(f"{n_bad} of {idx.size} interior nodes lack a Hessian stencil")
    return HessianEigs(ScalarField(grid, out), valid, n_bad)


# -- boundary derivatives --------------------------------------------------

@dataclass(frozen=True)
class BoundaryDerivatives:
    """First and second derivatives of u at boundary nodes (aligned with grid.boundary)."""

    u_nu: np.ndarray
    u_tt: np.ndarray  # tangential second derivative (NaN when n = 1)
    u_tn: np.ndarray  # mixed tangential-normal derivative
    u_nn: np.ndarray
    curvature: np.ndarray


def boundary_derivatives(u: ScalarField) -> BoundaryDerivatives:
    grid = u.grid
    f = u.values
    h = grid.h
    if grid.is_line:
        if grid.spec.kind is DomainKind.INTERVAL:
            d_left = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
            d_right = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
            u_nu = np.array([-d_left, d_right])
            u_nn = np.array([(2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2,
                             (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2])
            nan = np.full(2, np.nan)
            return BoundaryDerivatives(u_nu, nan, np.zeros(2), u_nn, np.zeros(2))
        u_nu = np.array([(3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)])
        u_nn = np.array([(2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2])
        H = grid.curvature
        u_tt = u_nu * H if grid.dim > 1 else np.full(1, np.nan)
        return BoundaryDerivatives(u_nu, u_tt, np.zeros(1), u_nn, H.copy())

    nb = grid.boundary.size
    u_nu, u_tt, u_tn, u_nn = (np.empty(nb) for _ in range(4))
    for m, node in enumerate(grid.boundary):
        fit = local_fit(grid, f, grid.coords[node])
        if fit is None:
            raise ValueError(f"no boundary stencil at node {node}")
        _, g, Hs = fit
        nu = grid.normals[m]
        tau = np.array([-nu[1], nu[0]])
        u_nu[m] = g @ nu
        u_tt[m] = tau @ Hs @ tau
        u_tn[m] = tau @ Hs @ nu
        u_nn[m] = nu @ Hs @ nu
    return BoundaryDerivatives(u_nu, u_tt, u_tn, u_nn, grid.curvature.copy())


def normal_derivative(u: ScalarField) -> np.ndarray:
    return boundary_derivatives(u).u_nu


def _check_nondegenerate(u_nu):
    if np.any(np.abs(u_nu) < 1e-12):
        raise DegenerateNormalDerivative("degenerate normal derivative")


def boundary_convexity_values(u: ScalarField, lam: float, direction="tangential",
                              derivs: BoundaryDerivatives | None = None) -> np.ndarray:
    """Boundary value of w_αα = ½e^{-u/2}(½u_α² − u_αα) per boundary node.

    ``direction`` is "tangential", "normal" or a pair (k1, k2) meaning
    k1·τ + k2·ν.  On the boundary u = 0 and u_τ = 0; the tangential second
    derivative is −u_ν times the (positive) boundary curvature with the sign
    of an inward-curving boundary, i.e. u_ττ = u_ν κ, and the normal one is
    eliminated with the equation, u_νν = −λ − (n−1)H u_ν.
    """
    grid = u.grid
    d = derivs or boundary_derivatives(u)
    n = grid.dim
    _check_nondegenerate(d.u_nu)
    geom = boundary_geometry(grid)
    normal = 0.5 * (0.5 * d.u_nu**2 + lam + (n - 1) * d.u_nu * geom.mean_curvature)
    if isinstance(direction, str) and direction == "normal":
        return normal
    if n == 1:
        raise ValueError("no tangential directions in one dimension")
    tangential = -0.5 * d.u_nu * d.curvature
    if isinstance(direction, str):
        if direction != "tangential":
            raise ValueError(f"unknown direction {direction!r}")
        return tangential
    k1, k2 = direction
    nrm = math.hypot(k1, k2)
    k1, k2 = k1 / nrm, k2 / nrm
    return k2**2 * normal - k1 * k2 * d.u_tn + k1**2 * tangential


def boundary_convexity(u: ScalarField, lam: float, direction="tangential") -> float:
    """Minimum over boundary nodes of the boundary w_αα (see ``boundary_convexity_values``)."""
    return float(np.min(boundary_convexity_values(u, lam, direction)))


def boundary_min_w_second(u: ScalarField, lam: float, derivs=None) -> tuple[float, int]:
    """Minimum over boundary nodes and unit directions of the boundary w_αα.

    At each node the quadratic form in (k1, k2) is
    [[tangential, −u_τν/2], [−u_τν/2, normal]]; its smallest eigenvalue is
    the worst direction.
    """
    grid = u.grid
    d = derivs or boundary_derivatives(u)
    normal = boundary_convexity_values(u, lam, "normal", d)
    if grid.dim == 1:
        vals = normal
    else:
        tang = boundary_convexity_values(u, lam, "tangential", d)
        off = -0.5 * d.u_tn
        mean = 0.5 * (tang + normal)
        vals = mean - np.sqrt((0.5 * (tang - normal)) ** 2 + off**2)
    m = int(np.argmin(vals))
    return float(vals[m]), int(grid.boundary[m])


def boundary_G_values(u: ScalarField, lam: float, K: float = 0.0, derivs=None) -> np.ndarray:
    grid = u.grid
    if grid.spec.kind is not DomainKind.ELLIPSE:
        K = 0.0  # radial symmetry: no mixed derivative, K = 0
    d = derivs or boundary_derivatives(u)
    H = boundary_geometry(grid).mean_curvature
    n = grid.dim
    return 0.5 * d.u_nu**2 + lam + (n - 1) * d.u_nu * H + K * d.u_nu


def boundary_G(u: ScalarField, lam: float, K: float = 0.0, derivs=None) -> tuple[float, int]:
    """Minimum of G = ½u_ν² + λ + (n−1)u_ν H + K u_ν over boundary nodes and its node index.

    K is forced to 0 on intervals and balls.
    """
    vals = boundary_G_values(u, lam, K, derivs)
    m = int(np.argmin(vals))
    return float(vals[m]), int(u.grid.boundary[m])


def mixed_derivative_ratio(u: ScalarField, derivs=None) -> tuple[float, int]:
    """max over boundary nodes of |u_τν| / |u_ν| and the node where it occurs.

    The radial reduction has no tangential variation, so the ratio is 0 on
    balls and intervals.
    """
    grid = u.grid
    d = derivs or boundary_derivatives(u)
    _check_nondegenerate(d.u_nu)
    ratio = np.abs(d.u_tn) / np.abs(d.u_nu)
    m = int(np.argmax(ratio))
    return float(ratio[m]), int(grid.boundary[m])


def default_K(u: ScalarField, derivs=None) -> float:
    """K = C₁² / (4 κ_min) with C₁ the measured mixed-derivative ratio.

    Returns 0 when the domain is a ball (inner and outer touching radii agree).
    """
    grid = u.grid
    geom = boundary_geometry(grid)
    if grid.spec.kind is not DomainKind.ELLIPSE or abs(geom.R_omega - geom.r_omega) <= 1e-12 * geom.R_omega:
        return 0.0
    c1, _ = mixed_derivative_ratio(u, derivs)
    return c1**2 / (4 * float(grid.curvature.min()))


# -- report ----------------------------------------------------------------

@dataclass
class ConvexityReport:
    lam: float
    min_interior_eig: float
    argmin: list
    c1_estimate: float
    conv_tol: float
    n_excluded: int
    boundary_min_G: float
    boundary_min_G_location: list
    boundary_min_w_second: float
    boundary_min_w_second_location: list
    mixed_ratio_max: float
    mixed_ratio_location: list
    K_used: float
    grid: dict

    @property
    def psd(self) -> bool:
        return self.min_interior_eig >= -self.conv_tol

    def to_dict(self) -> dict:
        d = asdict(self)
        d["psd"] = self.psd
        return d


def convexity_report(u: ScalarField, lam: float, K: float | None = None) -> ConvexityReport:
    grid = u.grid
    w = to_w(u)
    hes = hessian_min_eig_field(w)
    vals = hes.eig.values[grid.interior]
    vals = np.where(hes.valid, vals, np.inf)
    k = int(np.argmin(vals))
    min_eig = float(vals[k])
    derivs = boundary_derivatives(u)
    if K is None:
        K = default_K(u, derivs)
    g_min, g_node = boundary_G(u, lam, K, derivs)
    ws_min, ws_node = boundary_min_w_second(u, lam, derivs)
    ratio, r_node = mixed_derivative_ratio(u, derivs)
    loc = lambda node: [float(c) for c in grid.coords[node]]
    return ConvexityReport(
        lam=float(lam), min_interior_eig=min_eig, argmin=loc(grid.interior[k]),
        c1_estimate=max(min_eig, 0.0), conv_tol=conv_tol(w), n_excluded=hes.n_excluded,
        boundary_min_G=g_min, boundary_min_G_location=loc(g_node),
        boundary_min_w_second=ws_min, boundary_min_w_second_location=loc(ws_node),
        mixed_ratio_max=ratio, mixed_ratio_location=loc(r_node), K_used=float(K),
        grid=grid.metadata())


# -- structure conditions of the degenerate equation -------------------------

@dataclass
class StructureReport:
    i2_violation: float
    convexity_margins: dict
    p: float

    @property
    def ok(self) -> bool:
        return self.i2_violation <= 1e-10 and min(self.convexity_margins.values()) >= -1e-10

    def to_dict(self):
        return {"i2_violation": self.i2_violation, "convexity_margins": self.convexity_margins,
                "p": self.p, "ok": self.ok}


def check_structure_conditions(rho: Callable, b1: Callable, b2: Callable, b3: Callable,
                               lo: float, hi: float, n_samples: int = 256,
                               p: float = 2.0) -> StructureReport:
    """Check ρ'' − (ρ')²/(2ρ) = 0 and convexity of b₁, b₂, b₃ on [lo, hi] by finite differences.

    The I.2 violation is the max of |ρ'' − (ρ')²/(2ρ)|; each convexity margin
    is the smallest discrete second difference of the coefficient.
    """
    if n_samples < 64:
        raise ValueError("need at least 64 samples")
    if p < 2:
        raise ValueError("p must be ≥ 2")
    if not 0 < lo < hi:
        raise ValueError("sampling range must be positive")
    s = np.linspace(lo, hi, n_samples)
    ds = s[1] - s[0]

    def d1(f):
        return (f(s + ds) - f(s - ds)) / (2 * ds)

    def d2(f):
        return (f(s + ds) - 2 * f(s) + f(s - ds)) / ds**2

    r = np.asarray(rho(s), dtype=float)
    i2 = np.abs(d2(rho) - d1(rho) ** 2 / (2 * r))
    margins = {}
    for name, b in (("b1", b1), ("b2", b2), ("b3", b3)):
        margins[name] = float(np.min(np.broadcast_to(d2(b), s.shape)))
    return StructureReport(float(i2.max()), margins, float(p))
