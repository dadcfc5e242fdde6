"""Follow the minimal branch on the interval, the disk and the 3-ball.

Prints a coarse bifurcation table (λ, max φ, μ₁) and the estimated fold.
"""
import argparse

from gelfand.domain import DomainSpec, build_grid
from gelfand.steady import continue_branch


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--resolution", type=int, default=401)
    args = parser.parse_args()

    for name, spec in [("interval", DomainSpec.interval(1.0)),
                       ("disk", DomainSpec.ball(2, 1.0)),
                       ("3-ball", DomainSpec.ball(3, 1.0))]:
        br = continue_branch(build_grid(spec, args.resolution))
        print(f"\n{name}: lambda* ~ {br.lambda_star_estimate:.6f} ({br.termination_reason.value})")
        print(f"{'lambda':>10} {'max phi':>10} {'mu1':>10}")
        pts = br.minimal_points
        rows = pts[:: max(1, len(pts) // 8)]
        if rows[-1] is not pts[-1]:
            rows.append(pts[-1])
        for p in rows:
            print(f"{p.lam:10.5f} {p.max_phi:10.5f} {p.mu1:10.4g}")


if __name__ == "__main__":
    main()
