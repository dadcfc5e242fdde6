"""Steady Gelfand problem: Newton solves, stability eigenvalue, continuation."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .domain import DomainKind, Grid, ScalarField

log = logging.getLogger(__name__)

EIG_TOL = 1e-8
DENSE_EIG_LIMIT = 4000


class NewtonDivergence(RuntimeError):
    """Newton's method failed; ``last`` holds the final iterate."""

    def __init__(self, message, last: ScalarField | None = None, residual=math.nan):
        super().__init__(message)
        self.last = last
        self.residual = residual


class EigenvalueError(RuntimeError):
    pass


def default_newton_tol(lam: float) -> float:
    return 1e-10 * (1.0 + lam)


def rounding_floor(grid: Grid, phi_max: float) -> float:
    """Smallest residual max-norm one can expect from floating point.

    Rounding the unknowns at the ulp level already perturbs the discrete
    Laplacian by about |L|_inf * eps * |phi|_inf.
    """
    row_sum = 4.0 * grid.dim / grid.h**2
    return 8.0 * np.finfo(float).eps * row_sum * max(1.0, phi_max)


def residual(grid: Grid, phi_int, lam):
    """Δ_h φ + λ e^φ at interior nodes for zero boundary data."""
    return grid.lap_ii @ phi_int + lam * np.exp(phi_int)


def jacobian(grid: Grid, phi_int, lam):
    return (grid.lap_ii + sp.diags(lam * np.exp(phi_int))).tocsc()


@dataclass(frozen=True)
class SteadySolution:
    phi: ScalarField
    lam: float
    residual_norm: float
    mu1: float
    newton_iterations: int
    minimal: bool

    @property
    def max_phi(self) -> float:
        return self.phi.max()

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "max_phi": self.max_phi,
            "residual_norm": self.residual_norm,
            "mu1": self.mu1,
            "newton_iterations": self.newton_iterations,
            "minimal": self.minimal,
        }


def newton_solve(grid: Grid, lam: float, phi_init: ScalarField | None = None,
                 newton_tol: float | None = None, max_iter: int = 60,
                 compute_mu1: bool = True) -> SteadySolution:
    """Damped Newton iteration for Δ_h φ + λ e^φ = 0 with φ = 0 on the boundary.

    The step length is chosen by Armijo backtracking on ‖R‖²; a full step is
    accepted whenever it reduces ‖R‖² by at least 1e-4 of the predicted
    amount.  Convergence is declared when max|R| drops below
    ``max(newton_tol, rounding floor)``.
    """
    if lam < 0:
        raise ValueError("lambda must be ≥ 0")
    tol = default_newton_tol(lam) if newton_tol is None else newton_tol
    if phi_init is None:
        x = np.zeros(grid.interior.size)
    else:
        if phi_init.grid is not grid:
            raise ValueError("initial guess belongs to a different grid")
        x = phi_init.interior.copy()

    r = residual(grid, x, lam)
    rnorm = np.abs(r).max()
    its = 0
    while True:
        eff_tol = max(tol, rounding_floor(grid, x.max(initial=0.0)))
        if rnorm <= eff_tol:
            break
        if its >= max_iter:
            raise NewtonDivergence(f"no convergence in {max_iter} iterations (|R|={rnorm:.3e})",
                                   grid.from_interior(x), rnorm)
        try:
            dx = spla.spsolve(jacobian(grid, x, lam), -r)
        except RuntimeError as exc:  # singular factor
            raise NewtonDivergence(f"singular Jacobian: {exc}", grid.from_interior(x), rnorm)
        if not np.all(np.isfinite(dx)):
            raise NewtonDivergence("non-finite Newton step", grid.from_interior(x), rnorm)
        f0 = r @ r
        alpha = 1.0
        while True:
            xt = x + alpha * dx
            if np.all(xt < 700):
                rt = residual(grid, xt, lam)
                with np.errstate(over="ignore"):
                    ft = rt @ rt
                if np.isfinite(ft) and ft <= (1 - 2e-4 * alpha) * f0:
                    break
            alpha *= 0.5
            if alpha < 2.0**-30:
                if rnorm <= 100 * eff_tol:
                    # stagnated at the rounding level
                    rt, xt = r, x
                    break
                raise NewtonDivergence(f"line search exhausted (|R|={rnorm:.3e})",
                                       grid.from_interior(x), rnorm)
        stalled = xt is x
        x, r = xt, rt
        rnorm = np.abs(r).max()
        its += 1
        if stalled:
            break

    phi = grid.from_interior(x)
    mu1 = principal_eigenvalue(grid, phi, lam) if compute_mu1 else math.nan
    minimal = bool(mu1 >= -EIG_TOL) if compute_mu1 else True
    return SteadySolution(phi, float(lam), float(rnorm), float(mu1), its, minimal)


def linearized_operator(grid: Grid, phi: ScalarField, lam: float):
    """−Δ_h − λ diag(e^φ) on interior unknowns."""
    return (-grid.lap_ii - sp.diags(lam * np.exp(phi.interior))).tocsc()


def principal_eigenvalue(grid: Grid, phi: ScalarField, lam: float, eig_tol: float = EIG_TOL,
                         max_iter: int = 500, return_vector: bool = False):
    """Smallest eigenvalue of −Δ_h − λ e^φ with homogeneous Dirichlet data.

    Inverse iteration about zero finds the eigenvalue nearest zero; the
    answer is accepted when the eigenvector has one sign (the principal
    eigenfunction is the only sign-definite one).  Otherwise, or when the
    iteration stalls, the spectrum is computed densely.
    """
    if phi.grid is not grid:
        raise ValueError("field belongs to a different grid")
    A = linearized_operator(grid, phi, lam)
    n = A.shape[0]
    wts = grid.weights[grid.interior] if grid.is_line else np.ones(n)
    mu, vec = math.nan, None
    try:
        shift = 0.0
        lu = spla.splu(A)
        diag_u = lu.U.diagonal()
        if np.any(diag_u == 0):
            shift = -1e-6
            lu = spla.splu(A - shift * sp.identity(n, format="csc"))
        x = np.ones(n)
        x /= math.sqrt(wts @ (x * x))
        for _ in range(max_iter):
            y = lu.solve(x)
            y /= math.sqrt(wts @ (y * y))
            Ay = A @ y
            # weighted Rayleigh quotient; A is self-adjoint in this inner product on line grids
            mu_new = (wts @ (y * Ay)) / (wts @ (y * y))
            res = math.sqrt(wts @ (Ay - mu_new * y) ** 2)
            x = y
            if res <= eig_tol * max(abs(mu_new), 1.0):
                mu = mu_new
                vec = y
                break
    except RuntimeError:
        pass
    if vec is not None:
        big = np.abs(vec) > 1e-8 * np.abs(vec).max()
        if np.all(vec[big] > 0) or np.all(vec[big] < 0):
            return (float(mu), vec) if return_vector else float(mu)
    if n > DENSE_EIG_LIMIT:
        raise EigenvalueError(f"inverse iteration did not isolate the principal eigenvalue (n={n})")
    dense = A.toarray()
    if grid.is_line:
        s = np.sqrt(wts)
        vals, vecs = sla.eigh(dense * s[:, None] / s[None, :])
        k = 0
        mu, vec = vals[0], vecs[:, 0] / s
    else:
        vals, vecs = sla.eig(dense)
        k = int(np.argmin(vals.real))
        mu, vec = vals[k].real, vecs[:, k].real
    return (float(mu), vec) if return_vector else float(mu)


class Termination(enum.Enum):
    FOLD = "Fold"
    MU1_CROSSING = "Mu1Crossing"
    LAMBDA_CAP = "LambdaCap"
    NEWTON_FAILURE = "NewtonFailure"
    STEP_BUDGET = "StepBudget"


@dataclass
class BranchPoint:
    lam: float
    max_phi: float
    mu1: float
    residual_norm: float
    newton_iterations: int
    phi: ScalarField | None = None
    minimal: bool = True


@dataclass
class ContinuationBranch:
    grid: Grid
    points: list = field(default_factory=list)
    lambda_star_estimate: float = math.nan
    fold_detected: bool = False
    termination_reason: Termination = Termination.STEP_BUDGET

    @property
    def minimal_points(self):
        return [p for p in self.points if p.minimal]

    def table(self):
        """(lambda, max_phi) arrays along the minimal branch."""
        pts = self.minimal_points
        return (np.array([p.lam for p in pts]), np.array([p.max_phi for p in pts]))

    def summary(self) -> dict:
        return {
            "lambda_star_estimate": self.lambda_star_estimate,
            "fold_detected": self.fold_detected,
            "termination_reason": self.termination_reason.value,
            "n_points": len(self.points),
        }

    def solve_at(self, lam: float, newton_tol: float | None = None) -> SteadySolution:
        """Minimal solution at ``lam``, warm-started from the nearest lower branch point."""
        pts = [p for p in self.minimal_points if p.lam <= lam and p.phi is not None]
        if not pts:
            return newton_solve(self.grid, lam, newton_tol=newton_tol)
        start = max(pts, key=lambda p: p.lam)
        return newton_solve(self.grid, lam, start.phi, newton_tol=newton_tol)


@dataclass
class ContinuationControls:
    ds: float = 0.1
    ds_min: float = 1e-6
    ds_max: float = 0.25
    max_steps: int = 2000
    newton_tol: float | None = None
    max_corrector_iter: int = 12
    keep_solutions: bool = True


class _Augmented:
    """Pseudo-arclength system in y = (φ_interior, λ).

    Inner product: mean-square in φ (quadrature weights / |Ω|) plus λ².
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        w = grid.weights[grid.interior]
        self.w = w / w.sum()

    def dot(self, a, b):
        return float(self.w @ (a[:-1] * b[:-1]) + a[-1] * b[-1])

    def normalize(self, t):
        return t / math.sqrt(self.dot(t, t))

    def bordered(self, y, t):
        phi, lam = y[:-1], y[-1]
        J = jacobian(self.grid, phi, lam)
        col = sp.csc_matrix(np.exp(phi)[:, None])
        row = sp.csr_matrix((self.w * t[:-1])[None, :])
        corner = sp.csr_matrix([[t[-1]]])
        return sp.bmat([[J, col], [row, corner]], format="csc")

    def tangent(self, y, t_prev):
        M = self.bordered(y, t_prev)
        rhs = np.zeros(y.size)
        rhs[-1] = 1.0
        return self.normalize(spla.spsolve(M, rhs))

    def correct(self, y_pred, t, tol, max_iter):
        y = y_pred.copy()
        for it in range(1, max_iter + 1):
            phi, lam = y[:-1], y[-1]
            if np.any(phi > 700) or lam < 0:
                return None, it
            R = residual(self.grid, phi, lam)
            c = self.dot(t, y - y_pred)
            M = self.bordered(y, t)
            try:
                dy = spla.spsolve(M, -np.append(R, c))
            except RuntimeError:
                return None, it
            if not np.all(np.isfinite(dy)):
                return None, it
            y = y + dy
            if np.any(y[:-1] > 700) or y[-1] < 0:
                return None, it
            Rn = np.abs(residual(self.grid, y[:-1], y[-1])).max()
            eff = max(tol(y[-1]), rounding_floor(self.grid, y[:-1].max(initial=0.0)))
            step = np.abs(dy).max()
            if Rn <= eff and step <= 1e-6 * (1 + np.abs(y).max()):
                return y, it
        return None, max_iter


def continue_branch(grid: Grid, lambda_max_cap: float = math.inf,
                    controls: ContinuationControls | None = None) -> ContinuationBranch:
    """Trace the minimal branch from (λ, φ) = (0, 0) by pseudo-arclength continuation.

    A fold is declared when λ starts to decrease along the branch or when
    μ₁ changes sign; λ* is then located by maximising λ over the arclength
    parameter around the turning point.  If the corrector fails before any
    turning point is seen, λ* is bracketed by natural-parameter bisection.
    """
    ctl = controls or ContinuationControls()
    tolf = (lambda lam: default_newton_tol(lam)) if ctl.newton_tol is None else (lambda lam: ctl.newton_tol)
    aug = _Augmented(grid)
    branch = ContinuationBranch(grid)
    n = grid.interior.size

    def record(y, its, minimal=True):
        phi = grid.from_interior(y[:-1])
        lam = float(y[-1])
        mu1 = principal_eigenvalue(grid, phi, lam)
        rn = float(np.abs(residual(grid, y[:-1], lam)).max())
        pt = BranchPoint(lam, phi.max(), mu1, rn, its, phi if ctl.keep_solutions else None, minimal)
        branch.points.append(pt)
        return pt

    y = np.zeros(n + 1)
    record(y, 0)
    # tangent at the trivial solution: dφ/dλ = −Δ_h^{-1} 1
    dphi = spla.spsolve(grid.lap_ii, -np.ones(n))
    t = aug.normalize(np.append(dphi, 1.0))
    ds = ctl.ds
    steps_taken = []
    history = [(y, t)]

    for _ in range(ctl.max_steps):
        y_new = None
        while ds >= ctl.ds_min:
            y_pred = y + ds * t
            y_new, its = aug.correct(y_pred, t, tolf, ctl.max_corrector_iter)
            if y_new is not None:
                break
            ds *= 0.5
        if y_new is None:
            branch.termination_reason = Termination.NEWTON_FAILURE
            _bisect_lambda_star(grid, branch, ctl, tolf)
            return branch

        lam_new = y_new[-1]
        if lam_new > lambda_max_cap:
            theta = (lambda_max_cap - y[-1]) / (lam_new - y[-1])
            guess = grid.from_interior(y[:-1] + theta * (y_new[:-1] - y[:-1]))
            try:
                sol = newton_solve(grid, lambda_max_cap, guess, newton_tol=ctl.newton_tol)
            except NewtonDivergence:
                # overshot too far for a fixed-λ solve; shorten the step
                ds *= 0.5
                if ds < ctl.ds_min:
                    branch.termination_reason = Termination.NEWTON_FAILURE
                    _bisect_lambda_star(grid, branch, ctl, tolf)
                    return branch
                continue
            branch.points.append(BranchPoint(sol.lam, sol.max_phi, sol.mu1, sol.residual_norm,
                                             sol.newton_iterations,
                                             sol.phi if ctl.keep_solutions else None))
            branch.termination_reason = Termination.LAMBDA_CAP
            branch.lambda_star_estimate = max(p.lam for p in branch.points)
            branch.fold_detected = False
            return branch

        t_new = aug.tangent(y_new, t)
        turned = lam_new < y[-1]
        pt = record(y_new, its, minimal=not turned)
        if turned or pt.mu1 <= 0:
            if pt.mu1 <= 0:
                pt.minimal = False
            branch.fold_detected = True
            branch.termination_reason = Termination.FOLD if turned else Termination.MU1_CROSSING
            steps_taken.append(ds)
            history.append((y_new, t_new))
            _refine_fold(grid, branch, aug, history, steps_taken, tolf, ctl)
            return branch

        steps_taken.append(ds)
        history.append((y_new, t_new))
        y, t = y_new, t_new
        if its <= 3:
            ds = min(ds * 1.5, ctl.ds_max)
        elif its >= 7:
            ds *= 0.6

    branch.termination_reason = Termination.STEP_BUDGET
    branch.lambda_star_estimate = max(p.lam for p in branch.points)
    return branch


def _refine_fold(grid, branch, aug, history, steps, tolf, ctl):
    lams = [h[0][-1] for h in history]
    k = int(np.argmax(lams))
    yk, tk = history[k]
    lo = -steps[k - 1] if k >= 1 else 0.0
    hi = steps[k] if k < len(steps) else 0.0
    best = [(lams[k], None, 0)]

    def neg_lam(s):
        y, its = aug.correct(yk + s * tk, tk, tolf, 2 * ctl.max_corrector_iter)
        if y is None:
            return -lams[k]
        best.append((y[-1], y, its))
        return -y[-1]

    if hi > lo:
        minimize_scalar(neg_lam, bounds=(lo, hi), method="bounded",
                        options={"xatol": 1e-10 * max(1.0, hi - lo)})
    lam_f, y_f, its_f = max(best, key=lambda b: b[0])
    if y_f is not None and lam_f > max(p.lam for p in branch.minimal_points):
        # the turning point closes the minimal branch; keep arclength order
        phi = grid.from_interior(y_f[:-1])
        pt = BranchPoint(float(lam_f), phi.max(), principal_eigenvalue(grid, phi, lam_f),
                         float(np.abs(residual(grid, y_f[:-1], lam_f)).max()), its_f,
                         phi if ctl.keep_solutions else None, True)
        pos = next((i for i, p in enumerate(branch.points) if p.max_phi > pt.max_phi), len(branch.points))
        branch.points.insert(pos, pt)
    branch.lambda_star_estimate = float(max([b[0] for b in best] + [p.lam for p in branch.points]))


def _bisect_lambda_star(grid, branch, ctl, tolf):
    good = branch.minimal_points[-1]
    phi0 = good.phi
    lo = good.lam
    hi = lo + max(1e-3 * max(lo, 1.0), 0.05 * lo)
    # make sure hi actually fails
    for _ in range(30):
        try:
            sol = newton_solve(grid, hi, phi0, newton_tol=ctl.newton_tol, compute_mu1=False)
            lo, phi0 = hi, sol.phi
            hi = hi + (hi - good.lam)
        except NewtonDivergence:
            break
    for _ in range(30):
        if hi - lo <= 1e-6 * hi:
            break
        mid = 0.5 * (lo + hi)
        try:
            sol = newton_solve(grid, mid, phi0, newton_tol=ctl.newton_tol, compute_mu1=False)
            lo, phi0 = mid, sol.phi
        except NewtonDivergence:
            hi = mid
    branch.lambda_star_estimate = float(max(lo, max(p.lam for p in branch.points)))
    branch.fold_detected = True


def _scale_factor(a: Grid, b: Grid) -> float:
    sa, sb = a.spec, b.spec
    if sa.kind is not sb.kind:
        raise ValueError("branches were computed on different domain families")
    if sa.kind is DomainKind.BALL:
        if sa.dim != sb.dim:
            raise ValueError("dimension mismatch")
        return sb.radius / sa.radius
    if sa.kind is DomainKind.INTERVAL:
        return sb.length / sa.length
    raise ValueError("scaling check needs balls or intervals")


def scaling_check(branch_r1: ContinuationBranch, branch_r: ContinuationBranch,
                  r: float | None = None) -> float:
    """Largest relative mismatch of λ_r r² against λ_1 at equal max φ.

    The substitution φ̄(x) = φ(rx) maps the problem on the dilated domain to
    the reference one with λ replaced by λ r²; points of the second branch
    are compared with the first one interpolated in max φ, and the two
    λ* estimates are compared as well.
    """
    factor = _scale_factor(branch_r1.grid, branch_r.grid)
    if r is None:
        r = factor
    elif abs(r - factor) > 1e-12 * max(r, factor):
        raise ValueError(f"r={r} does not match the domains (ratio {factor})")
    l1, m1 = branch_r1.table()
    lr, mr = branch_r.table()
    keep = np.concatenate([[True], np.diff(m1) > 0])
    interp = PchipInterpolator(m1[keep], l1[keep], extrapolate=False)
    mismatch = 0.0
    for lam, m in zip(lr, mr):
        if lam <= 0:
            continue
        hit = np.flatnonzero(m1[keep] == m)
        ref = l1[keep][hit[0]] if hit.size else interp(m)
        if not np.isfinite(ref) or ref <= 0:
            continue
        mismatch = max(mismatch, abs(lam * r**2 - ref) / ref)
    s1, sr = branch_r1.lambda_star_estimate, branch_r.lambda_star_estimate
    if np.isfinite(s1) and np.isfinite(sr) and branch_r1.fold_detected and branch_r.fold_detected:
        mismatch = max(mismatch, abs(sr * r**2 - s1) / s1)
    return float(mismatch)
