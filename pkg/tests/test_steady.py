import math

import numpy as np
import pytest

import reference_values as ref
from gelfand.domain import DomainSpec, build_grid, discrete_laplacian
from gelfand.steady import (NewtonDivergence, Termination, continue_branch, default_newton_tol,
                            newton_solve, principal_eigenvalue, scaling_check)


@pytest.fixture(scope="module")
def unit_interval():
    return build_grid(DomainSpec.interval(1.0), 801)


def test_lambda_zero_gives_zero_and_dirichlet_eigenvalue(unit_interval):
    sol = newton_solve(unit_interval, 0.0)
    assert np.all(sol.phi.values == 0)
    h = unit_interval.h
    assert abs(sol.mu1 - math.pi**2) <= math.pi**4 * h**2 / 12 * 1.01
    assert sol.minimal


def test_principal_eigenvalue_constant_shift(unit_interval):
    mu = principal_eigenvalue(unit_interval, unit_interval.zeros(), 1.0)
    h = unit_interval.h
    assert abs(mu - (math.pi**2 - 1)) <= math.pi**4 * h**2 / 12 * 1.01


def test_interval_max_phi_matches_oracle(unit_interval):
    sol = newton_solve(unit_interval, 1.0)
    assert abs(sol.max_phi - ref.INTERVAL_MAX_PHI_LAMBDA_1) < 1e-6
    assert sol.residual_norm <= default_newton_tol(1.0)
    assert np.all(sol.phi.values >= 0) and np.all(sol.phi.on_boundary == 0)
    # the reported residual is the max norm of Δ_h φ + λ e^φ at interior nodes
    lap = discrete_laplacian(unit_interval, sol.phi).values
    res = np.abs(lap + np.exp(sol.phi.values))[unit_interval.interior].max()
    assert res == pytest.approx(sol.residual_norm, rel=1e-6, abs=1e-14)


def test_negative_lambda_rejected(unit_interval):
    with pytest.raises(ValueError):
        newton_solve(unit_interval, -1.0)


def test_no_solution_above_fold():
    g = build_grid(DomainSpec.interval(1.0), 201)
    with pytest.raises(NewtonDivergence) as info:
        newton_solve(g, 5.0)
    assert info.value.last is not None


def test_disk_matches_oracle():
    g = build_grid(DomainSpec.ball(2, 1.0), 801)
    sol = newton_solve(g, 0.5)
    assert abs(sol.max_phi - ref.DISK_MAX_PHI_LAMBDA_HALF) < 1e-6


def test_interval_fold(interval_branch):
    assert interval_branch.fold_detected
    assert abs(interval_branch.lambda_star_estimate - ref.INTERVAL_LAMBDA_STAR) <= 1e-3
    assert interval_branch.termination_reason in (Termination.FOLD, Termination.MU1_CROSSING)


def test_disk_fold(disk_branch):
    assert disk_branch.fold_detected
    assert abs(disk_branch.lambda_star_estimate - ref.DISK_LAMBDA_STAR) <= 2e-3


def test_ball3_fold(ball3_branch):
    assert abs(ball3_branch.lambda_star_estimate - ref.BALL3_LAMBDA_STAR) <= 3e-3


def test_lambda_star_bounds_branch(interval_branch, disk_branch):
    for br in (interval_branch, disk_branch):
        assert all(p.lam <= br.lambda_star_estimate for p in br.minimal_points)


def test_mu1_positive_and_decreasing_before_fold(interval_branch, disk_branch):
    for br in (interval_branch, disk_branch):
        mus = [p.mu1 for p in br.minimal_points]
        assert all(m > 0 for m in mus[:-1])
        assert np.all(np.diff(mus) < 1e-9)
        assert mus[-1] < 0.05 * mus[0]


def test_mu1_positive_at_ninety_percent_two_resolutions(interval_branch):
    lam = 0.9 * interval_branch.lambda_star_estimate
    mus = []
    for res in (401, 801):
        g = build_grid(DomainSpec.interval(1.0), res)
        br = continue_branch(g) if res != 801 else interval_branch
        mus.append(br.solve_at(lam).mu1)
    assert all(m > 0 for m in mus)
    assert abs(mus[0] - mus[1]) < 0.01 * mus[1]


def test_branch_is_monotone_in_lambda(disk_branch):
    pts = [p for p in disk_branch.minimal_points if p.phi is not None]
    for a, b in zip(pts, pts[1:]):
        assert np.all(a.phi.values <= b.phi.values + 1e-12)


def test_ball10_no_fold_below_cap(ball10_branch):
    br = ball10_branch
    assert not br.fold_detected
    assert br.termination_reason is Termination.LAMBDA_CAP
    assert all(p.mu1 > 0 for p in br.points)
    lams, M = br.table()
    assert lams[-1] == pytest.approx(15.99)
    assert np.all(np.diff(M) > 0)


def test_ball10_phi_half_below_log4(ball10_branch):
    values = []
    for lam in (15.0, 15.9, 15.99):
        phi = ball10_branch.solve_at(lam).phi
        values.append(float(np.interp(0.5, phi.grid.coords[:, 0], phi.values)))
    assert all(v < ref.LOG4 for v in values)
    assert values[0] < values[1] < values[2]
    # matches the shooting oracle to discretization accuracy
    assert abs(values[1] - ref.BALL10_PHI_HALF[15.9]) < 1e-4
    assert abs(values[2] - ref.BALL10_PHI_HALF[15.99]) < 1e-4


def test_scaling_identity(disk_branch):
    assert scaling_check(disk_branch, disk_branch) == 0.0


def test_scaling_disk_radius_two(disk_branch):
    br2 = continue_branch(build_grid(DomainSpec.ball(2, 2.0), 801))
    assert scaling_check(disk_branch, br2, 2.0) <= 1e-2
    assert abs(4 * br2.lambda_star_estimate - disk_branch.lambda_star_estimate) <= 1e-2


def test_scaling_interval_length(interval_branch):
    br = continue_branch(build_grid(DomainSpec.interval(2.0), 801))
    assert scaling_check(interval_branch, br) <= 1e-2


def test_scaling_dimension_mismatch(disk_branch, ball3_branch):
    with pytest.raises(ValueError, match="dimension"):
        scaling_check(disk_branch, ball3_branch)


def test_ellipse_branch_reports_measurement():
    br = continue_branch(build_grid(DomainSpec.ellipse(1.5, 1.0), 48))
    assert br.fold_detected
    # the inscribed unit disk and the circumscribed disk of radius 1.5 bracket the value
    assert 2.0 / 1.5**2 < br.lambda_star_estimate < 2.0
