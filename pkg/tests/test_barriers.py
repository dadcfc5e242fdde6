import math

import numpy as np
import pytest

from gelfand.barriers import (barrier_fields, branch_table, check_barriers, lambda_bar,
                              lambda_bar_general)
from gelfand.domain import DomainSpec, build_grid, discrete_laplacian
from gelfand.geometry import boundary_G
from gelfand.steady import continue_branch, newton_solve


def test_barrier_center_values():
    g = build_grid(DomainSpec.ball(3, 2.0), 101)
    lo, hi = barrier_fields(g, 0.6, 0.3)
    assert lo.values[0] == pytest.approx(0.6 * 4 / 6)
    assert hi.values[0] == pytest.approx(math.exp(0.3) * lo.values[0])
    assert lo.on_boundary[0] == hi.on_boundary[0] == 0.0
    lo0, hi0 = barrier_fields(g, 0.6, 0.0)
    assert np.array_equal(lo0.values, hi0.values)


def test_lower_barrier_laplacian_exact():
    for n in (1, 2, 5):
        g = build_grid(DomainSpec.ball(n, 1.3), 151)
        lo, _ = barrier_fields(g, 0.8, 0.1)
        lap = discrete_laplacian(g, lo).values[g.interior]
        assert np.allclose(lap, -0.8, rtol=0, atol=1e-10)


def test_barriers_reject_non_balls():
    g = build_grid(DomainSpec.interval(1.0), 51)
    with pytest.raises(ValueError):
        barrier_fields(g, 1.0, 0.0)


def test_disk_sandwich(disk_branch):
    sol = disk_branch.solve_at(0.5)
    rep = check_barriers(sol, disk_branch)
    assert rep.lower_violation <= 1e-8 and rep.upper_violation <= 1e-8
    assert rep.phi_nu_lower <= rep.phi_nu <= rep.phi_nu_upper
    assert rep.phi_nu_lower == pytest.approx(-0.5 * math.exp(rep.M) / 2)
    assert rep.phi_nu_upper == pytest.approx(-0.25)
    assert rep.phi_nu_bounds_ok and rep.sandwich_ok
    # all three functions vanish on the boundary
    lo, hi = barrier_fields(sol.phi.grid, 0.5, rep.M)
    assert lo.on_boundary[0] == sol.phi.on_boundary[0] == hi.on_boundary[0] == 0.0


def test_lambda_bar_disk(disk_branch):
    lb = lambda_bar(2, 1.0, disk_branch)
    lam1, c2, c3 = lb.components
    assert c2 == 0.5
    assert c3 == pytest.approx(2 * math.exp(-lb.M))
    assert lb.value == min(lb.components)
    assert 0 < lb.value <= disk_branch.lambda_star_estimate
    # λ₁: e^M = 2 is reached before the fold on the disk
    assert lam1 < disk_branch.lambda_star_estimate
    assert math.exp(disk_branch.solve_at(lam1).max_phi) == pytest.approx(2.0, rel=1e-9)


def test_lambda_bar_below_each_component(ball3_branch):
    lb = lambda_bar(3, 1.0, ball3_branch)
    assert all(lb.value <= c + 1e-14 for c in lb.components)
    assert lb.value <= ball3_branch.lambda_star_estimate


def test_lambda_bar_rejects_one_dimension():
    with pytest.raises(ValueError, match="normal-direction-only regime"):
        lambda_bar(1, 1.0, ([0.0, 1.0], [0.0, 0.2]))
    with pytest.raises(ValueError):
        lambda_bar(2, 1.0, ([], []))


def test_lambda_bar_scaling_with_table():
    lams = np.linspace(0, 1.9, 40)
    M = 0.3 * lams + 0.05 * lams**2
    for n in (2, 3, 6):
        base = lambda_bar(n, 1.0, (lams, M)).value
        for r in (0.5, 2.0, 7.0):
            scaled = lambda_bar(n, r, (lams / r**2, M)).value
            assert scaled * r**2 == pytest.approx(base, rel=1e-6)


def test_lambda_bar_scaling_with_branches(disk_branch):
    br2 = continue_branch(build_grid(DomainSpec.ball(2, 2.0), 801))
    assert 4 * lambda_bar(2, 2.0, br2).value == pytest.approx(lambda_bar(2, 1.0, disk_branch).value, rel=1e-6)


def test_lambda_bar_vanishes_for_large_balls():
    lams = np.linspace(0, 1.9, 40)
    M = 0.3 * lams
    vals = [lambda_bar(3, r, (lams / r**2, M)).value for r in (1, 10, 100)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-3


def test_lambda_bar_from_callable():
    g = build_grid(DomainSpec.ball(3, 1.0), 401)
    M = lambda lam: newton_solve(g, lam, compute_mu1=False).max_phi
    lb = lambda_bar(3, 1.0, M, lam_max=3.0)
    assert math.exp(M(lb.lambda1)) == pytest.approx(1.5, rel=1e-9)


def test_branch_table_is_monotone(disk_branch):
    lams, M = branch_table(disk_branch)
    assert np.all(np.diff(lams) > 0) and np.all(np.diff(M) > 0)


def test_general_threshold_on_circle_matches_disk(disk_branch):
    g = build_grid(DomainSpec.ellipse(1.0, 1.0), 64)
    br = continue_branch(g)
    lb_e = lambda_bar_general(g, br)
    lb_d = lambda_bar(2, 1.0, disk_branch)
    assert lb_e.value == pytest.approx(lb_d.value, rel=1e-6)


def test_general_threshold_is_conservative(disk_branch):
    g = build_grid(DomainSpec.ellipse(2.0, 1.0), 48)
    lb = lambda_bar_general(g, continue_branch(g))
    assert lb.value <= lambda_bar(2, 1.0, disk_branch).value
    assert lb.value == 0.0  # no positive window: n/(B R_Ω) ≤ 1


def test_general_threshold_G_positive():
    g = build_grid(DomainSpec.ellipse(1.1, 1.0), 64)
    br = continue_branch(g)
    lb = lambda_bar_general(g, br)
    assert lb.value > 0
    for lam in np.linspace(0.1, 0.95, 5) * lb.value:
        sol = newton_solve(g, lam, compute_mu1=False)
        assert boundary_G(sol.phi, lam)[0] > 0
