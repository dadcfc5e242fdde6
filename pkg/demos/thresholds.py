"""Convexity threshold λ̄ on balls and ellipses, and the barrier sandwich on the disk."""
import argparse

from gelfand.barriers import check_barriers, lambda_bar, lambda_bar_general
from gelfand.domain import DomainSpec, build_grid
from gelfand.steady import continue_branch


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--resolution", type=int, default=401)
    args = parser.parse_args()

    for n in (2, 3, 10):
        br = continue_branch(build_grid(DomainSpec.ball(n, 1.0), args.resolution),
                             lambda_max_cap=15.99 if n >= 10 else float("inf"))
        lb = lambda_bar(n, 1.0, br)
        lam1, c2, c3 = lb.components
        print(f"n={n:2d}: lambda_bar = {lb.value:.5f} (lambda1 {lam1:.5f}, c2 {c2:.5f}, c3 {c3:.5f})")
        if n == 2:
            rep = check_barriers(br.solve_at(0.5 * lb.value), br)
            print(f"       sandwich ok: {rep.sandwich_ok}, phi_nu {rep.phi_nu:.5f} in "
                  f"[{rep.phi_nu_lower:.5f}, {rep.phi_nu_upper:.5f}]")

    for a in (1.0, 1.1, 1.2, 1.5):
        g = build_grid(DomainSpec.ellipse(a, 1.0), 48)
        lb = lambda_bar_general(g, continue_branch(g))
        print(f"ellipse a={a}: lambda_bar = {lb.value:.5f}")


if __name__ == "__main__":
    main()
