"""Run one experiment sweep and write metrics.csv plus per-trial traces.

    python scripts/run_experiment.py forest_sensing --out results/forest_sensing
    python scripts/run_experiment.py maze_dynamic --full-grid --trials 25 --out results/maze_dynamic
"""
import argparse
import sys
import time
from dataclasses import replace

from funnelplan import default_library
from funnelplan.experiments import KINDS, ExperimentSpec, metrics_csv, run_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full-grid", action="store_true")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    spec = ExperimentSpec(args.kind, trials=args.trials, seed_base=args.seed, name=args.kind)
    if args.full_grid:
        spec = replace(spec.full(), trials=args.trials)
    t0 = time.perf_counter()
    done = [0]

    def progress(r):
        done[0] += 1
        print(f"[{time.perf_counter() - t0:7.1f}s] {r.cell} t{r.trial} {r.status} l_T={r.l_T:.1f}", file=sys.stderr)

    rows, _ = run_batch(spec, default_library(), workers=args.workers, out_dir=args.out, progress=progress)
    sys.stdout.write(metrics_csv(rows))


if __name__ == "__main__":
    main()
