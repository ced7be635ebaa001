"""Disagreement of the point-hull containment pre-filter with the exact test, per dimension and arc resolution."""
import argparse

import numpy as np

from funnelplan.geometry import Ellipsoid, contains_ellipsoid, hull_contains, max_outer_value


def random_spd(rng, n, lo, hi):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(rng.uniform(lo, hi, n)) @ Q.T


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print("dim  k   disagreements  max_margin")
    for n in (2, 3, 4):
        for k in (2, 4, 8, 16, 32, 64):
            rng = np.random.default_rng(args.seed)
            count, worst = 0, 0.0
            for _ in range(args.pairs):
                outer = Ellipsoid(rng.normal(0, 0.3, n), random_spd(rng, n, 0.2, 5.0))
                inner = Ellipsoid(outer.center + rng.normal(0, 0.2, n), random_spd(rng, n, 1.0, 20.0))
                if hull_contains(outer, inner, k) != contains_ellipsoid(outer, inner):
                    count += 1
                    worst = max(worst, max_outer_value(outer, inner) - 1.0)
            print(f"{n:3d}  {k:2d}  {count:13d}  {worst:.2e}")


if __name__ == "__main__":
    main()
