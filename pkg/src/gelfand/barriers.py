"""Quadratic barriers on balls, normal-derivative bounds and the λ̄ threshold.

On B_r the minimal solution is squeezed between

    θ(x) = λ/(2n)·(r² − |x|²)   and   θ̄(x) = e^M·θ(x),   M = max φ,

which gives −λe^M r/n ≤ φ_ν ≤ −λr/n.  Feeding that interval into
G = ½φ_ν² + λ + (n−1)φ_ν/r yields the threshold

    λ̄ = min{λ₁, (n−1)²/(2r²), n(n−1)/(e^M r²)},

where λ₁ is the largest λ with e^M < n/(n−1) and M is taken at λ̄ itself.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from .domain import DomainKind, Grid, ScalarField, boundary_geometry
from .geometry import boundary_G, default_K, normal_derivative
from .steady import ContinuationBranch, SteadySolution, newton_solve

FIXED_POINT_MAX_ITER = 20
FIXED_POINT_TOL = 1e-10


def _require_ball(grid: Grid):
    if grid.spec.kind is not DomainKind.BALL:
        raise ValueError("barriers are defined on balls only")


def barrier_fields(grid: Grid, lam: float, M: float) -> tuple[ScalarField, ScalarField]:
    _require_ball(grid)
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    if M < 0:
        raise ValueError("M must be ≥ 0")
    n, r = grid.dim, grid.spec.radius
    x = grid.coords[:, 0]
    theta = lam / (2 * n) * (r**2 - x**2)
    theta[grid.boundary] = 0.0
    return ScalarField(grid, theta), ScalarField(grid, math.exp(M) * theta)


# -- (λ, M) tables ---------------------------------------------------------

def branch_table(source) -> tuple[np.ndarray, np.ndarray]:
    """(λ, M) pairs, strictly increasing in λ, from a branch or an array pair.

    For a branch only the minimal part up to the first decrease of λ is kept.
    """
    if isinstance(source, ContinuationBranch):
        pts = [p for p in source.minimal_points if p.mu1 > 0]
        lam = np.array([p.lam for p in pts])
        M = np.array([p.max_phi for p in pts])
    else:
        lam, M = (np.asarray(a, dtype=float) for a in source)
    if lam.size == 0:
        raise ValueError("empty (lambda, M) table")
    keep = [0]
    for k in range(1, lam.size):
        if lam[k] <= lam[keep[-1]]:
            break
        keep.append(k)
    return lam[keep], M[keep]


class _MOfLambda:
    """M(λ) from a table, optionally refined by solves on the branch's grid.

    Table-only lookups interpolate linearly in (λ, e^M).  With a branch or a
    callable, values are computed exactly at the requested λ.
    """

    def __init__(self, source, lam_max=None):
        self.exact = None
        if callable(source) and not isinstance(source, ContinuationBranch):
            if lam_max is None:
                raise ValueError("a callable M(λ) needs lam_max")
            self.exact = source
            grid_l = np.linspace(0.0, lam_max, 33)
            self.table = (grid_l, np.array([source(l) for l in grid_l]))
        else:
            self.table = branch_table(source)
            if isinstance(source, ContinuationBranch):
                self.exact = lambda l: source.solve_at(l).max_phi
        self._memo = {}

    def exp_m(self, lam):
        if self.exact is None or lam <= 0:
            lams, M = self.table
            return float(np.interp(lam, lams, np.exp(M)))
        if lam not in self._memo:
            self._memo[lam] = math.exp(self.exact(lam))
        return self._memo[lam]

    def lambda1(self, threshold):
        """Largest λ with e^{M(λ)} < threshold (supremum over the tabulated range)."""
        lams, M = self.table
        eM = np.exp(M)
        above = np.flatnonzero(eM >= threshold)
        if above.size == 0:
            return float(lams[-1])
        k = int(above[0])
        if k == 0:
            return 0.0
        if self.exact is None:
            s = (threshold - eM[k - 1]) / (eM[k] - eM[k - 1])
            return float(lams[k - 1] + s * (lams[k] - lams[k - 1]))
        return float(brentq(lambda l: self.exp_m(l) - threshold, lams[k - 1], lams[k],
                            xtol=1e-13 * lams[k], rtol=4 * np.finfo(float).eps))


@dataclass(frozen=True)
class LambdaBar:
    value: float
    lambda1: float
    c2: float
    c3: float
    M: float
    iterations: int
    lambda1_rule: str = "supremum over the tabulated branch"

    @property
    def components(self) -> tuple[float, float, float]:
        return (self.lambda1, self.c2, self.c3)

    def to_dict(self):
        return asdict(self)


def _self_consistent(lam1, c2, c3_of, scale):
    """Solve λ = min{λ₁, c₂, c₃(λ)} by fixed-point iteration with a root-finding fallback."""
    lam = min(lam1, c2, c3_of(0.0))
    for it in range(1, FIXED_POINT_MAX_ITER + 1):
        new = min(lam1, c2, c3_of(lam))
        if abs(new - lam) <= FIXED_POINT_TOL * max(scale, abs(new)):
            return new, it
        lam = new
    top = min(lam1, c2)
    if c3_of(top) >= top:
        return top, FIXED_POINT_MAX_ITER
    root = brentq(lambda s: s - c3_of(s), 0.0, top, xtol=FIXED_POINT_TOL * scale)
    return float(root), FIXED_POINT_MAX_ITER + 1


def _threshold(n, B, R, m: _MOfLambda) -> LambdaBar:
    ratio = n / (B * R)
    if ratio <= 1.0:
        return LambdaBar(0.0, 0.0, B**2 / 2, 0.0, 0.0, 0)
    lam1 = m.lambda1(ratio)
    c2 = B**2 / 2
    c3_of = lambda s: n * B / (m.exp_m(s) * R)
    value, its = _self_consistent(lam1, c2, c3_of, c2)
    return LambdaBar(value, lam1, c2, c3_of(value), math.log(m.exp_m(value)), its)


def lambda_bar(n: int, r: float, M_of_lambda, lam_max: float | None = None) -> LambdaBar:
    """λ̄ on the ball B_r in ℝⁿ.

    ``M_of_lambda`` is a continuation branch on B_r, a (λ, M) table, or a
    callable λ ↦ max φ_λ (then ``lam_max`` bounds the search for λ₁).
    """
    if n == 1:
        raise ValueError("normal-direction-only regime: the threshold needs n ≥ 2")
    if n < 1 or not r > 0:
        raise ValueError("need n ≥ 2 and r > 0")
    return _threshold(n, (n - 1) / r, r, _MOfLambda(M_of_lambda, lam_max))


def lambda_bar_general(grid: Grid, table, K: float | None = None,
                       probe: ScalarField | None = None) -> LambdaBar:
    """Conservative λ̄ on an ellipse from inner/outer touching radii.

    With B = (n−1)/r_Ω + K the normal derivative lies in
    [−λe^M R_Ω/n, −λr_Ω/n], and the ball argument gives
    λ₁ = sup{λ : e^M < n/(B R_Ω)}, c₂ = B²/2, c₃ = nB/(e^M R_Ω).
    Returns 0 when n/(B R_Ω) ≤ 1.  K defaults to the geometry module's
    choice evaluated on ``probe`` (or on the solution at the smallest
    tabulated positive λ).
    """
    geom = boundary_geometry(grid)
    n = grid.dim
    m = _MOfLambda(table)
    if K is None:
        if probe is None:
            pos = m.table[0][m.table[0] > 0]
            probe = newton_solve(grid, float(pos[0]) if pos.size else 0.1, compute_mu1=False).phi
        K = default_K(probe)
    B = (n - 1) / geom.r_omega + K
    return _threshold(n, B, geom.R_omega, m)


# -- report ----------------------------------------------------------------

@dataclass
class BarrierReport:
    lam: float
    M: float
    lower_violation: float
    upper_violation: float
    barrier_tol: float
    phi_nu: float
    phi_nu_lower: float
    phi_nu_upper: float
    phi_nu_bounds_ok: bool
    lambda1: float
    lambda_bar: float
    lambda_bar_components: list
    lambda1_rule: str
    G_min: float
    grid: dict

    @property
    def sandwich_ok(self) -> bool:
        return self.lower_violation <= self.barrier_tol and self.upper_violation <= self.barrier_tol

    def to_dict(self):
        d = asdict(self)
        d["sandwich_ok"] = self.sandwich_ok
        return d


def check_barriers(sol: SteadySolution, table=None, barrier_tol: float | None = None) -> BarrierReport:
    """Compare a minimal solution on a ball with its barriers.

    ``table`` (a branch or (λ, M) arrays on the same ball) enables the λ̄
    fields; without it they are NaN.
    """
    grid = sol.phi.grid
    _require_ball(grid)
    lam = sol.lam
    n, r, h = grid.dim, grid.spec.radius, grid.h
    tol = barrier_tol if barrier_tol is not None else max(1e-8, 10 * h**2)
    phi = sol.phi.values
    M = float(phi.max())
    if lam > 0:
        lo, hi = barrier_fields(grid, lam, M)
        lower = float(np.max(lo.values - phi))
        upper = float(np.max(phi - hi.values))
    else:
        lower = upper = float(np.abs(phi).max())
    phi_nu = float(normal_derivative(sol.phi)[0])
    nu_lo, nu_hi = -lam * math.exp(M) * r / n, -lam * r / n
    nu_ok = nu_lo - 10 * h <= phi_nu <= nu_hi + 10 * h
    lb = None
    if table is not None and n >= 2:
        lb = lambda_bar(n, r, table)
    G_min, _ = boundary_G(sol.phi, lam, 0.0)
    return BarrierReport(
        lam=lam, M=M, lower_violation=lower, upper_violation=upper, barrier_tol=tol,
        phi_nu=phi_nu, phi_nu_lower=nu_lo, phi_nu_upper=nu_hi, phi_nu_bounds_ok=bool(nu_ok),
        lambda1=lb.lambda1 if lb else math.nan, lambda_bar=lb.value if lb else math.nan,
        lambda_bar_components=list(lb.components) if lb else [],
        lambda1_rule=lb.lambda1_rule if lb else "", G_min=G_min, grid=grid.metadata())
