"""Parabolic flow (e^u)_t = Δu + λe^u and its w = e^{-u/2} twin.

Written as u_t = e^{-u}Δu + λ, one IMEX step freezes the diffusion
coefficient at the current iterate and treats the source explicitly:

    (I − dt·diag(e^{-u^k}) L) u^{k+1} = u^k + dt·λ.

The matrix is an M-matrix, so the step preserves ordering with respect to
steady solutions, and on grids whose weighted Laplacian is symmetric the
energy F decreases for every dt.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

from .domain import Grid, ScalarField, discrete_laplacian, gradient, integrate
from .geometry import hessian_min_eig_field, to_w

BLOW_UP_CAP = 50.0


class FlowError(RuntimeError):
    pass


class BlowUpSuspected(FlowError):
    def __init__(self, t: float, max_u: float, report=None):
        super().__init__(f"blow-up suspected at t={t:.6g}: max u = {max_u:.6g}")
        self.t = t
        self.max_u = max_u
        self.report = report


@dataclass
class FlowState:
    u: ScalarField
    t: float
    lam: float
    dt: float
    step_count: int = 0
    lyapunov_history: list = field(default_factory=list)
    convexity_history: list = field(default_factory=list)

    @property
    def grid(self) -> Grid:
        return self.u.grid


def default_dt(grid: Grid) -> float:
    return 0.5 * grid.h


def lyapunov(u: ScalarField, lam: float) -> float:
    """F(u) = −∫(½ u Δu + λ e^u) with the grid quadrature weights."""
    lap = discrete_laplacian(u.grid, u).values
    return -integrate(u.grid, 0.5 * u.values * lap + lam * np.exp(u.values))


def _frozen_system(grid: Grid, coeff, dt):
    n = grid.interior.size
    return (sp.identity(n, format="csc") - dt * sp.diags(coeff) @ grid.lap_ii).tocsc()


def _bands(grid: Grid):
    if "bands" not in grid._cache:
        L = grid.lap_ii.todia()
        grid._cache["bands"] = tuple(np.asarray(L.diagonal(k)) for k in (1, 0, -1))
    return grid._cache["bands"]


def _solve_frozen(grid: Grid, coeff, dt, rhs):
    """Solve (I − dt·diag(coeff)·L_II) x = rhs; banded on line grids."""
    if grid.is_line:
        up, mid, low = _bands(grid)
        ab = np.zeros((3, mid.size))
        ab[0, 1:] = -dt * coeff[:-1] * up
        ab[1] = 1.0 - dt * coeff * mid
        ab[2, :-1] = -dt * coeff[1:] * low
        return solve_banded((1, 1), ab, rhs)
    return spla.splu(_frozen_system(grid, coeff, dt)).solve(rhs)


def step_imex(state: FlowState, cap: float = BLOW_UP_CAP) -> FlowState:
    """Advance one IMEX step; the returned state shares the history lists."""
    grid = state.grid
    u = state.u.interior
    try:
        u_new = _solve_frozen(grid, np.exp(-u), state.dt, u + state.dt * state.lam)
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        raise FlowError(f"linear solve failed at t={state.t:.6g}: {exc}") from exc
    t_new = state.t + state.dt
    if not np.all(np.isfinite(u_new)):
        raise FlowError(f"non-finite iterate at t={t_new:.6g}")
    top = float(u_new.max(initial=0.0))
    if top > cap:
        raise BlowUpSuspected(t_new, top)
    return replace(state, u=grid.from_interior(u_new), t=t_new, step_count=state.step_count + 1)


def step_w_form(w: ScalarField, lam: float, dt: float) -> ScalarField:
    """One step of w_t = w²Δw − w|∇w|² − (λ/2)w with w = 1 on the boundary.

    The diffusion is implicit with w² frozen; the gradient and source terms
    are explicit, the gradient by centred differences.
    """
    grid = w.grid
    wi = w.interior
    if np.any(wi <= 0):
        raise FlowError("positivity lost")
    grad2 = (gradient(grid, w.values) ** 2).sum(axis=1)
    bdry = grid.lap_ib @ w.on_boundary
    rhs = wi + dt * (wi**2 * bdry - wi * grad2 - 0.5 * lam * wi)
    w_new = _solve_frozen(grid, wi**2, dt, rhs)
    if np.any(w_new <= 0):
        raise FlowError("positivity lost")
    return grid.from_interior(w_new, boundary_value=1.0)


@dataclass
class FlowControls:
    dt: float | None = None  # default 0.5·h
    steady_tol: float = 1e-9
    max_steps: int = 200_000
    cap: float = BLOW_UP_CAP
    reference: ScalarField | None = None
    convexity_stride: int = 0  # 0 disables the convexity monitor
    record_stride: int = 1


@dataclass
class FlowReport:
    state: FlowState
    converged: bool
    steady_residual: float
    wall_steps: int
    max_comparison_violation: float
    max_lyapunov_increase: float
    rows: list
    blow_up: dict | None = None

    def summary(self) -> dict:
        s = self.state
        return {
            "lambda": s.lam,
            "dt": s.dt,
            "t": s.t,
            "converged": self.converged,
            "steady_residual": self.steady_residual,
            "wall_steps": self.wall_steps,
            "max_u": s.u.max(),
            "max_comparison_violation": self.max_comparison_violation,
            "max_lyapunov_increase": self.max_lyapunov_increase,
            "min_convexity": min((c for _, c in s.convexity_history), default=None),
            "blow_up": self.blow_up,
        }


TIME_SERIES_COLUMNS = ("step", "t", "max_u", "lyapunov", "min_hessian_eig_w", "steady_residual")


def _min_eig(u: ScalarField) -> float:
    hes = hessian_min_eig_field(to_w(u))
    vals = hes.eig.values[u.grid.interior]
    return float(vals[hes.valid].min())


def run_to_steady(u0: ScalarField, lam: float, controls: FlowControls | None = None) -> FlowReport:
    """Integrate from ``u0`` until ‖u^{k+1} − u^k‖_∞/dt ≤ steady_tol.

    Raises BlowUpSuspected (with the partial report attached as ``report``)
    when max u passes the cap.  Running out of steps is not an error.
    """
    ctl = controls or FlowControls()
    grid = u0.grid
    if lam < 0:
        raise ValueError("lambda must be ≥ 0")
    if np.any(u0.values < 0):
        raise ValueError("initial data must be ≥ 0")
    if np.any(u0.on_boundary != 0):
        raise ValueError("initial data must vanish on the boundary")
    ref = ctl.reference
    if ref is not None and np.any(u0.values > ref.values):
        raise ValueError("initial data must lie below the reference solution")
    dt = ctl.dt if ctl.dt is not None else default_dt(grid)
    if not dt > 0:
        raise ValueError("dt must be > 0")
    state = FlowState(u0, 0.0, float(lam), float(dt))
    F = lyapunov(u0, lam)
    state.lyapunov_history.append((0.0, F))
    cmin = math.nan
    if ctl.convexity_stride:
        cmin = _min_eig(u0)
        state.convexity_history.append((0.0, cmin))
    rows = [(0, 0.0, u0.max(), F, cmin, math.nan)]
    worst_cmp = max(float(np.max(u0.values - ref.values)), 0.0) if ref is not None else 0.0
    worst_dF = -math.inf
    res = math.inf
    converged = False

    def report(blow=None):
        return FlowReport(state, converged, res, state.step_count, worst_cmp,
                          worst_dF, rows, blow)

    while state.step_count < ctl.max_steps:
        prev = state.u
        try:
            state = step_imex(state, ctl.cap)
        except BlowUpSuspected as exc:
            exc.report = report({"t": exc.t, "max_u": exc.max_u, "cap": ctl.cap})
            raise
        res = float(np.abs(state.u.values - prev.values).max()) / dt
        F_new = lyapunov(state.u, lam)
        worst_dF = max(worst_dF, F_new - F)
        F = F_new
        state.lyapunov_history.append((state.t, F))
        if ref is not None:
            worst_cmp = max(worst_cmp, float(np.max(state.u.values - ref.values)))
        k = state.step_count
        if ctl.convexity_stride and k % ctl.convexity_stride == 0:
            cmin = _min_eig(state.u)
            state.convexity_history.append((state.t, cmin))
        converged = res <= ctl.steady_tol
        if converged or k % ctl.record_stride == 0:
            rows.append((k, state.t, state.u.max(), F, cmin, res))
        if converged:
            break
    if ctl.convexity_stride and state.convexity_history[-1][0] != state.t:
        state.convexity_history.append((state.t, _min_eig(state.u)))
    return report()
