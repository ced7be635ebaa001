"""Disturbed closed-loop rollouts per library funnel; prints the worst normalised V."""
import argparse

import numpy as np

from funnelplan import default_library
from funnelplan.funnel import FunnelEdge
from funnelplan.world import invariance_trials


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=500)
    ap.add_argument("--level", type=float, default=0.9)
    ap.add_argument("--w-max", type=float, default=None, help="override the certified disturbance bound")
    args = ap.parse_args()
    lib = default_library()
    print("funnel  max_V    violations")
    for pos, fid in enumerate(lib.ids()):
        v = invariance_trials(FunnelEdge(lib, pos, [0.0, 0.0], 0), args.runs, seed=pos, level=args.level, w_max=args.w_max)
        print(f"{fid:6s}  {v.max():.4f}  {int(np.sum(v > 1.0))}")


if __name__ == "__main__":
    main()
