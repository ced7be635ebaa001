"""Command-line entry point: ``synth``, ``plan``, ``batch`` and ``render``.

Exit status is 0 on success, 1 when a run fails and 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import bundled_path
from .config import SynthesisConfig
from .errors import SynthesisFailure
from .funnel import FunnelLibrary

EXIT_OK, EXIT_RUN_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _library(path):
    if path is None:
        return FunnelLibrary.load(bundled_path("library16.json"))
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"library file not found: {p}")
    return FunnelLibrary.load(p)


def _scenario_path(name) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    bundled = Path(str(bundled_path(f"scenarios/{name}.json")))
    if bundled.is_file():
        return bundled
    raise UsageError(f"scenario file not found: {name}")


def cmd_synth(args) -> int:
    from .synthesis import generate_library

    params = {}
    if args.params:
        params = json.loads(Path(args.params).read_text())
    cfg = SynthesisConfig.from_dict(params)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    try:
        lib = generate_library(cfg, workers=args.workers)
    except SynthesisFailure as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lib.save(out / "library.json")
    lines = ["funnel  knots  rho_0      rho_f      worst_margin  samples"]
    for fid in lib.ids():
        F = lib.funnels[fid]
        c = F.certificate
        lines.append(f"{fid:6s}  {F.n_knots:5d}  {c.rho[0]:.6f}  {c.rho[-1]:.6f}  {c.worst_margin:+.3e}    {c.n_samples}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_plan(args) -> int:
    from .world import Scenario, pipx_run, write_trace

    sc = Scenario.load(_scenario_path(args.scenario))
    if args.seed is not None:
        sc = sc.with_seeds(args.seed, args.seed, args.seed)
    lib = _library(args.library)
    res = pipx_run(sc, lib)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(res, sc, out / "trace.jsonl")
    sc.save(out / "scenario.json")
    (out / "result.json").write_text(json.dumps(res.summary(), indent=1, sort_keys=True) + "\n")
    (out / "graph.json").write_text(json.dumps(res.graph.to_dict(), sort_keys=True) + "\n")
    print(f"{res.status} l_T={res.l_T:.2f} m ticks={res.ticks} max_V={res.max_V:.3f}")
    return EXIT_OK if res.status == "SUCCESS" and res.invariance_violations == 0 else EXIT_RUN_FAILURE


def cmd_batch(args) -> int:
    from .experiments import ExperimentSpec, metrics_csv, run_batch

    p = Path(args.spec)
    if not p.is_file():
        raise UsageError(f"experiment spec not found: {p}")
    spec = ExperimentSpec.load(p)
    if args.full_grid:
        spec = spec.full()
    if args.trials is not None:
        spec = replace(spec, trials=args.trials, trials_per_cell={})
    if args.seed is not None:
        spec = replace(spec, seed_base=args.seed)
    lib = _library(args.library)
    rows, results = run_batch(spec, lib, workers=args.workers, out_dir=args.out)
    sys.stdout.write(metrics_csv(rows))
    return EXIT_RUN_FAILURE if any(r.invariance_violations for r in results) else EXIT_OK


def cmd_render(args) -> int:
    from .render import read_trace, render_trace, write_frames
    from .world import Scenario

    tp, sp = Path(args.trace), Path(args.scenario)
    if not tp.is_file():
        raise UsageError(f"trace file not found: {tp}")
    if not sp.is_file():
        raise UsageError(f"world file not found: {sp}")
    trace = read_trace(tp)
    sc = Scenario.load(sp)
    snapshot, lib = None, None
    if args.graph:
        gp = Path(args.graph)
        if not gp.is_file():
            raise UsageError(f"graph file not found: {gp}")
        snapshot = json.loads(gp.read_text())
        lib = _library(args.library)
    frames = render_trace(trace, sc, args.render_every, snapshot, lib)
    paths = write_frames(frames, args.out)
    print(f"wrote {len(paths)} frames to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="funnelplan", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a funnel library")
    s.add_argument("--params", help="generator parameter file (JSON)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    p = sub.add_parser("plan", help="run one scenario")
    p.add_argument("--scenario", required=True, help="scenario file or bundled name (empty, forest30, maze0)")
    p.add_argument("--library")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    b = sub.add_parser("batch", help="run an experiment sweep")
    b.add_argument("--spec", required=True, help="experiment spec file (JSON)")
    b.add_argument("--library")
    b.add_argument("--seed", type=int)
    b.add_argument("--trials", type=int)
    b.add_argument("--full-grid", action="store_true")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_batch)

    r = sub.add_parser("render", help="render a trace to SVG frames")
    r.add_argument("--trace", required=True)
    r.add_argument("--scenario", required=True, help="world (scenario) file of the run")
    r.add_argument("--graph")
    r.add_argument("--library")
    r.add_argument("--render-every", type=int, default=10)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
