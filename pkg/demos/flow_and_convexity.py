"""Run the parabolic flow to its steady state and inspect w = exp(-u/2).

Below the fold the flow from zero settles on the minimal solution with a
decreasing Lyapunov functional; above it the solution blows up.
"""
import argparse

import numpy as np

from gelfand.domain import DomainSpec, build_grid
from gelfand.flow import BlowUpSuspected, FlowControls, run_to_steady
from gelfand.geometry import convexity_report
from gelfand.steady import newton_solve


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--resolution", type=int, default=201)
    parser.add_argument("--lam", type=float, default=0.4)
    args = parser.parse_args()

    g = build_grid(DomainSpec.ball(2, 1.0), args.resolution)
    sol = newton_solve(g, args.lam)
    rep = run_to_steady(g.zeros(), args.lam, FlowControls(reference=sol.phi, convexity_stride=50))
    F = [f for _, f in rep.state.lyapunov_history]
    print(rep.summary())
    print(f"flow vs Newton: {np.abs(rep.state.u.values - sol.phi.values).max():.2e}")
    print(f"Lyapunov: {F[0]:.6f} -> {F[-1]:.6f}, largest increase {rep.max_lyapunov_increase:.1e}")
    eigs = [c for _, c in rep.state.convexity_history]
    # w = 1 at the start, so the Hessian begins at zero and turns positive
    print(f"min Hessian eig of w: start {eigs[0]:.4f}, lowest {min(eigs):.4f}, end {eigs[-1]:.4f}")

    cr = convexity_report(sol.phi, args.lam)
    print(f"steady state: c1 = {cr.c1_estimate:.5f}, boundary G min = {cr.boundary_min_G:.5f}")

    try:
        run_to_steady(g.zeros(), 2.5)
    except BlowUpSuspected as exc:
        print(f"lambda = 2.5 (above the fold): blow-up suspected at t = {exc.t:.4f}")


if __name__ == "__main__":
    main()
