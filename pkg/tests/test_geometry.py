import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gelfand import io
from gelfand.domain import DomainSpec, ScalarField, build_grid
from gelfand.geometry import (DegenerateNormalDerivative, boundary_convexity,
                              boundary_convexity_values, boundary_derivatives, boundary_G,
                              boundary_G_values, check_structure_conditions, conv_tol,
                              convexity_report, hessian_min_eig_field, local_fit,
                              mixed_derivative_ratio, to_w)
from gelfand.steady import newton_solve


def test_to_w_pointwise():
    g = build_grid(DomainSpec.interval(1.0), 11)
    assert np.all(to_w(g.zeros()).values == 1.0)
    u = g.from_interior(np.full(9, 2 * math.log(2)))
    w = to_w(u)
    assert w.values[5] == pytest.approx(0.5, rel=1e-15)
    assert np.all(w.on_boundary == 1.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 30), min_size=9, max_size=9),
       st.lists(st.floats(0, 5), min_size=9, max_size=9))
def test_to_w_reverses_order(base, bump):
    g = build_grid(DomainSpec.interval(1.0), 11)
    u = g.from_interior(base)
    v = g.from_interior(np.add(base, bump))
    assert np.all(to_w(u).values >= to_w(v).values)


def test_hessian_of_quadratics():
    g = build_grid(DomainSpec.interval(1.0), 101)
    eig = hessian_min_eig_field(g.field(lambda x: x**2)).eig
    assert np.allclose(eig.values[g.interior], 2.0, atol=1e-9)
    g = build_grid(DomainSpec.ball(3, 1.0), 101)
    eig = hessian_min_eig_field(g.field(lambda r: r**2)).eig
    assert np.allclose(eig.values[g.interior], 2.0, atol=1e-9)
    g = build_grid(DomainSpec.ellipse(1.5, 1.0), 48)
    res = hessian_min_eig_field(g.field(lambda x, y: x**2 + x * y + 3 * y**2))
    expected = np.linalg.eigvalsh([[2.0, 1.0], [1.0, 6.0]])[0]
    assert res.n_excluded == 0
    assert np.allclose(res.eig.values[g.interior], expected, atol=1e-8)


def test_hessian_of_constant_w():
    for spec in (DomainSpec.interval(1.0), DomainSpec.ball(2, 1.0), DomainSpec.ellipse(1.2, 1.0)):
        g = build_grid(spec, 48)
        eig = hessian_min_eig_field(to_w(g.zeros())).eig
        assert np.abs(eig.values).max() < 1e-9


def test_interval_w_is_strictly_convex():
    g = build_grid(DomainSpec.interval(1.0), 801)
    sol = newton_solve(g, 1.0, compute_mu1=False)
    w = to_w(sol.phi)
    eig = hessian_min_eig_field(w).eig.values[g.interior]
    assert np.all(eig > 0)
    # analytic form w'' = ½e^{-φ/2}(½φ'² − φ'') with φ'' = −λe^φ
    x = g.coords[:, 0]
    phi = sol.phi.values
    dphi = np.gradient(phi, x)
    analytic = 0.5 * np.exp(-phi / 2) * (0.5 * dphi**2 + np.exp(phi))
    assert np.abs(eig - analytic[g.interior]).max() < 1e-4


def test_tangential_on_disk():
    g = build_grid(DomainSpec.ball(2, 1.0), 801)
    lam = 0.1
    sol = newton_solve(g, lam)
    val = boundary_convexity(sol.phi, lam, "tangential")
    u_nu = boundary_derivatives(sol.phi).u_nu[0]
    assert val == pytest.approx(0.5 * abs(u_nu))
    M = sol.max_phi
    assert 0.5 * lam / 2 - 1e-6 <= val <= 0.5 * lam * math.exp(M) / 2 + 1e-6


@pytest.mark.parametrize("n, r, lam", [(2, 1.0, 0.3), (3, 2.0, 0.2), (10, 1.0, 1.0)])
def test_normal_direction_algebra(n, r, lam):
    g = build_grid(DomainSpec.ball(n, r), 201)
    # the lower barrier has u_ν = −λr/n exactly, and one-sided differences are exact on it
    u = g.field(lambda x: lam / (2 * n) * (r**2 - x**2))
    val = boundary_convexity(u, lam, "normal")
    assert val == pytest.approx(0.5 * lam * (lam * r**2 / (2 * n**2) + 1 / n), rel=1e-10)


def test_general_direction_reduces():
    g = build_grid(DomainSpec.ellipse(1.5, 1.0), 48)
    lam = 0.3
    u = newton_solve(g, lam, compute_mu1=False).phi
    tang = boundary_convexity_values(u, lam, "tangential")
    norm = boundary_convexity_values(u, lam, "normal")
    assert np.allclose(boundary_convexity_values(u, lam, (1.0, 0.0)), tang)
    assert np.allclose(boundary_convexity_values(u, lam, (0.0, 2.0)), norm)


def test_degenerate_normal_derivative():
    g = build_grid(DomainSpec.ball(2, 1.0), 51)
    with pytest.raises(DegenerateNormalDerivative, match="degenerate normal derivative"):
        boundary_convexity(g.zeros(), 0.0, "normal")


def test_no_tangential_direction_in_1d():
    g = build_grid(DomainSpec.interval(1.0), 51)
    u = newton_solve(g, 1.0, compute_mu1=False).phi
    with pytest.raises(ValueError):
        boundary_convexity(u, 1.0, "tangential")
    assert boundary_convexity(u, 1.0, "normal") > 0


def _raw_w_second_ellipse(u, alpha_k):
    """½e^{-u/2}(½u_α² − u_αα) from a raw local fit at each boundary node."""
    grid = u.grid
    out = []
    k1, k2 = alpha_k
    for m, node in enumerate(grid.boundary):
        _, g, H = local_fit(grid, u.values, grid.coords[node])
        nu = grid.normals[m]
        tau = np.array([-nu[1], nu[0]])
        a = (k1 * tau + k2 * nu) / math.hypot(k1, k2)
        out.append(0.5 * (0.5 * (g @ a) ** 2 - a @ H @ a))
    return np.array(out)


@pytest.mark.parametrize("k", [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -2.0)])
def test_identity_against_raw_differences_ellipse(k):
    lam = 0.4
    errs = []
    for res in (48, 96):
        g = build_grid(DomainSpec.ellipse(1.5, 1.0), res)
        u = newton_solve(g, lam, compute_mu1=False).phi
        err = np.abs(boundary_convexity_values(u, lam, k) - _raw_w_second_ellipse(u, k)).max()
        assert err <= 10 * g.h
        errs.append(err)
    assert errs[1] < errs[0]


def test_identity_against_raw_differences_ball():
    for n in (2, 3):
        g = build_grid(DomainSpec.ball(n, 1.0), 801)
        lam = 0.5
        u = newton_solve(g, lam, compute_mu1=False).phi
        f, h = u.values, g.h
        u_nu = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
        u_nn = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2
        raw_normal = 0.5 * (0.5 * u_nu**2 - u_nn)
        assert abs(boundary_convexity(u, lam, "normal") - raw_normal) <= 10 * h


def test_boundary_G_on_disk():
    g = build_grid(DomainSpec.ball(2, 1.0), 801)
    sol = newton_solve(g, 0.1)
    G, node = boundary_G(sol.phi, 0.1, K=0.0)
    assert G > 0 and node == g.boundary[0]
    # K is forced to 0 on balls
    assert boundary_G(sol.phi, 0.1, K=5.0)[0] == G
    # algebraic identity
    s = boundary_derivatives(sol.phi).u_nu[0]
    assert G == 0.5 * s**2 + 0.1 + 1 * s * 1.0


def test_boundary_G_vanishes_with_lambda():
    g = build_grid(DomainSpec.ball(2, 1.0), 401)
    vals = []
    for lam in (1e-2, 1e-3, 1e-4):
        sol = newton_solve(g, lam, compute_mu1=False)
        vals.append(boundary_G(sol.phi, lam)[0])
    assert all(v > 0 for v in vals)
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-3


def test_G_quadratic_structure():
    # G(s) = ½s² + B s + λ is positive for every s iff B² < 2λ
    g = build_grid(DomainSpec.ellipse(1.5, 1.0), 32)
    u = newton_solve(g, 0.2, compute_mu1=False).phi
    d = boundary_derivatives(u)
    for K in (0.0, 0.3):
        G = boundary_G_values(u, 0.2, K)
        expected = 0.5 * d.u_nu**2 + 0.2 + (d.curvature + K) * d.u_nu
        assert np.allclose(G, expected, atol=1e-14)
        B = d.curvature + K
        roots_lo = -B - np.sqrt(np.maximum(B**2 - 0.4, 0))
        roots_hi = -B + np.sqrt(np.maximum(B**2 - 0.4, 0))
        inside = (d.u_nu > roots_lo) & (d.u_nu < roots_hi)
        assert np.all((G < 0) == inside)


def test_mixed_ratio_radial_is_noise():
    g = build_grid(DomainSpec.ball(2, 1.0), 801)
    u = newton_solve(g, 0.5, compute_mu1=False).phi
    assert mixed_derivative_ratio(u)[0] <= 10 * g.h


def test_mixed_ratio_ellipse_stable_under_refinement():
    vals = []
    for res in (64, 128):
        g = build_grid(DomainSpec.ellipse(1.5, 1.0), res)
        u = newton_solve(g, 0.2, compute_mu1=False).phi
        vals.append(mixed_derivative_ratio(u)[0])
    assert all(np.isfinite(vals)) and vals[0] > 0
    assert 0.5 <= vals[1] / vals[0] <= 2.0


def test_mixed_ratio_manufactured_xy():
    g = build_grid(DomainSpec.ellipse(1.0, 1.0), 64)
    u = g.field(lambda x, y: x * y)
    d = boundary_derivatives(u)
    x, y = g.coords[g.boundary].T
    keep = np.abs(x * y) > 0.2
    analytic = np.abs(x**2 - y**2) / np.abs(2 * x * y)
    numeric = np.abs(d.u_tn) / np.abs(d.u_nu)
    assert np.abs(numeric - analytic)[keep].max() <= g.h


def test_structure_conditions_gelfand_instance():
    lam = 1.7
    rep = check_structure_conditions(lambda w: w**2, lambda w: 0 * w, lambda w: -w,
                                     lambda w: -lam * w / 2, 0.1, 1.0)
    assert rep.i2_violation <= 1e-10
    assert min(rep.convexity_margins.values()) >= -1e-10
    assert rep.ok


def test_structure_conditions_negative_control():
    rep = check_structure_conditions(lambda w: w**3, lambda w: 0 * w, lambda w: -w,
                                     lambda w: -w, 0.5, 1.0)
    assert rep.i2_violation == pytest.approx(1.5, rel=1e-3)
    rep = check_structure_conditions(lambda w: w**2, lambda s: s**2, lambda w: -w,
                                     lambda w: -w, 0.5, 1.0)
    assert rep.convexity_margins["b1"] == pytest.approx(2.0, rel=1e-6)


def test_structure_conditions_sampling():
    with pytest.raises(ValueError):
        check_structure_conditions(lambda w: w**2, *(lambda w: w,) * 3, 0.1, 1.0, n_samples=10)


def test_convexity_report_fields_and_json():
    g = build_grid(DomainSpec.ball(2, 1.0), 401)
    sol = newton_solve(g, 0.1)
    rep = convexity_report(sol.phi, 0.1)
    assert rep.psd and rep.c1_estimate > 0
    assert rep.c1_estimate == max(rep.min_interior_eig, 0.0)
    assert rep.K_used == 0.0
    assert rep.conv_tol == conv_tol(to_w(sol.phi))
    d = json.loads(io.dumps(rep.to_dict()))
    for key in ("min_interior_eig", "argmin", "c1_estimate", "boundary_min_G",
                "boundary_min_w_second", "mixed_ratio_max", "K_used", "grid", "schema_version"):
        assert key in d


def test_c1_zero_when_not_strictly_convex():
    g = build_grid(DomainSpec.interval(1.0), 101)
    # w = e^{-u/2} concave in the middle for a narrow bump
    u = g.field(lambda x: 3 * np.exp(-((x - 0.5) / 0.1) ** 2) * x * (1 - x) * 4)
    rep = convexity_report(u, 1.0)
    assert rep.min_interior_eig < 0 and rep.c1_estimate == 0.0


@pytest.mark.parametrize("spec", [DomainSpec.interval(1.0), DomainSpec.ball(2, 1.0)])
def test_argmin_stable_under_refinement(spec):
    locs = []
    hs = []
    for res in (201, 401):
        g = build_grid(spec, res)
        sol = newton_solve(g, 0.5, compute_mu1=False)
        locs.append(np.array(convexity_report(sol.phi, 0.5).argmin))
        hs.append(g.h)
    assert np.abs(locs[0] - locs[1]).max() <= 2 * hs[0]


def test_ellipse_hessian_exclusions_small():
    g = build_grid(DomainSpec.ellipse(2.0, 1.0), 64)
    u = newton_solve(g, 0.5, compute_mu1=False).phi
    res = hessian_min_eig_field(to_w(u))
    assert res.n_excluded <= 0.05 * g.interior.size
    assert np.all(res.eig.values[g.interior][res.valid] > -conv_tol(to_w(u)))
