"""Batch experiment harness: parameter sweeps, per-trial runs and metrics aggregation."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Optional

from .config import PlannerConfig
from .funnel import FunnelLibrary
from .world import Scenario, Seeds, forest_scenario, load_maze, maze_scenario, pipx_run, write_trace

KINDS = ("forest_sensing", "forest_dynamic", "maze_sensing", "maze_dynamic")

THINNED_GRIDS = {
    "forest_sensing": {"n_trees": list(range(0, 151, 10))},
    "forest_dynamic": {"n_trees": [5, 35, 65, 95, 135], "change": [0, 50, 100]},
    "maze_sensing": {"pair": list(range(10))},
    "maze_dynamic": {"change": [0, 50, 90, 100], "pair": list(range(10))},
}
FULL_GRIDS = {
    "forest_sensing": {"n_trees": list(range(0, 151))},
    "forest_dynamic": {"n_trees": list(range(5, 136, 10)), "change": list(range(0, 101, 10))},
    "maze_sensing": {"pair": list(range(10))},
    "maze_dynamic": {"change": list(range(0, 101, 10)), "pair": list(range(10))},
}
DEFAULT_TRIALS = {"forest_sensing": 30, "forest_dynamic": 25, "maze_sensing": 25, "maze_dynamic": 25}


@dataclass
class ExperimentSpec:
    kind: str
    grid: dict = field(default_factory=dict)
    trials: int = 10
    seed_base: int = 0
    planner: dict = field(default_factory=dict)
    trials_per_cell: dict = field(default_factory=dict)
    out_dir: Optional[str] = None
    name: str = "experiment"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not self.grid:
            self.grid = dict(THINNED_GRIDS[self.kind])
        if any(len(v) == 0 for v in self.grid.values()):
            raise ValueError("experiment grid is empty")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        PlannerConfig.from_dict(self.planner)

    def cells(self) -> list:
        keys = sorted(self.grid)
        return [dict(zip(keys, vals)) for vals in product(*(self.grid[k] for k in keys))]

    def trials_for(self, cell: dict) -> int:
        return int(self.trials_per_cell.get(cell_key(cell), self.trials))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format_version"] = 1
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if d.pop("format_version", 1) != 1:
            raise ValueError("unsupported experiment spec format_version")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment spec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def full(self) -> "ExperimentSpec":
        return replace(self, grid=dict(FULL_GRIDS[self.kind]), trials=DEFAULT_TRIALS[self.kind])


def cell_key(cell: dict) -> str:
    return ",".join(f"{k}={cell[k]}" for k in sorted(cell))


def trial_seeds(spec: ExperimentSpec, trial: int) -> Seeds:
    s = spec.seed_base * 100003 + trial
    return Seeds(s, s, s)


def build_scenario(spec: ExperimentSpec, cell: dict, trial: int, maze: Optional[dict] = None) -> Scenario:
    seeds = trial_seeds(spec, trial)
    base = Scenario(planner=PlannerConfig.from_dict(spec.planner))
    run_id = f"{spec.name}:{cell_key(cell)}:t{trial}"
    if spec.kind.startswith("forest"):
        base = replace(base, change_mode="dynamic" if spec.kind == "forest_dynamic" else "sensing", change_percentage=float(cell.get("change", 0)))
        sc = forest_scenario(int(cell["n_trees"]), seeds, base)
    else:
        mode = "dynamic" if spec.kind == "maze_dynamic" else "sensing"
        sc = maze_scenario(int(cell["pair"]), seeds, maze, mode, float(cell.get("change", 0)), base)
    return replace(sc, run_id=run_id)


@dataclass(frozen=True)
class TrialResult:
    cell: str
    trial: int
    status: str
    l_T: float
    max_V: float
    invariance_violations: int
    ticks: int


def run_trial(spec: ExperimentSpec, cell: dict, trial: int, lib: FunnelLibrary, trace_dir: Optional[Path] = None, maze=None) -> TrialResult:
    sc = build_scenario(spec, cell, trial, maze)
    res = pipx_run(sc, lib, record_trace=trace_dir is not None)
    if trace_dir is not None:
        name = cell_key(cell).replace(",", "_").replace("=", "") + f"_t{trial}.jsonl"
        write_trace(res, sc, Path(trace_dir) / name)
    return TrialResult(cell_key(cell), trial, res.status, res.l_T, res.max_V, res.invariance_violations, res.ticks)


@dataclass(frozen=True)
class MetricsRow:
    cell: str
    trials: int
    success_rate: float
    success_std: float
    l_T_mean: float
    l_T_min: float
    l_T_max: float
    l_T_mean_all: float
    max_V: float
    statuses: str

    FIELDS = ("cell", "trials", "success_rate", "success_std", "l_T_mean", "l_T_min", "l_T_max", "l_T_mean_all", "max_V", "statuses")


def aggregate(results) -> list:
    """Pure fold over trial results: one row per cell, independent of input order."""
    by_cell: dict = {}
    for r in results:
        by_cell.setdefault(r.cell, []).append(r)
    rows = []
    for cell in sorted(by_cell, key=_cell_sort_key):
        rs = sorted(by_cell[cell], key=lambda r: r.trial)
        n = len(rs)
        ok = [r for r in rs if r.status == "SUCCESS"]
        p = len(ok) / n
        lts = [r.l_T for r in ok]
        nan = float("nan")
        rows.append(
            MetricsRow(
                cell,
                n,
                p,
                math.sqrt(p * (1 - p)),
                math.fsum(lts) / len(lts) if lts else nan,
                min(lts) if lts else nan,
                max(lts) if lts else nan,
                math.fsum(r.l_T for r in rs) / n,
                max(r.max_V for r in rs),
                "".join(r.status[0] for r in rs),
            )
        )
    return rows


def _cell_sort_key(cell: str):
    out = []
    for part in cell.split(","):
        k, _, v = part.partition("=")
        try:
            out.append((k, float(v), ""))
        except ValueError:
            out.append((k, math.inf, v))
    return out


def metrics_csv(rows, spec: Optional[ExperimentSpec] = None) -> str:
    buf = io.StringIO()
    if spec is not None:
        buf.write("# " + json.dumps(spec.to_dict(), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MetricsRow.FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in MetricsRow.FIELDS])
    return buf.getvalue()


def read_metrics_csv(text: str) -> list:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(round(v, 9))
    return v


def _job(args):
    spec_d, cell, trial, lib_d, trace_dir = args
    spec = ExperimentSpec.from_dict(spec_d)
    lib = FunnelLibrary.from_dict(lib_d)
    return run_trial(spec, cell, trial, lib, trace_dir)


def run_batch(spec: ExperimentSpec, lib: FunnelLibrary, workers: int = 1, out_dir=None, progress=None):
    """Run every (cell, trial) and aggregate; returns ``(rows, trial_results)``."""
    out = Path(out_dir or spec.out_dir) if (out_dir or spec.out_dir) else None
    trace_dir = None
    if out is not None:
        trace_dir = out / "traces"
        trace_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cell, t) for cell in spec.cells() for t in range(spec.trials_for(cell))]
    maze = load_maze() if spec.kind.startswith("maze") else None
    results = []
    if workers > 1:
        lib_d = lib.to_dict()
        with ProcessPoolExecutor(workers) as ex:
            futs = [ex.submit(_job, (spec.to_dict(), c, t, lib_d, trace_dir)) for c, t in jobs]
            for f in futs:
                results.append(f.result())
    else:
        for c, t in jobs:
            results.append(run_trial(spec, c, t, lib, trace_dir, maze))
            if progress:
                progress(results[-1])
    rows = aggregate(results)
    if out is not None:
        (out / "metrics.csv").write_text(metrics_csv(rows, spec))
    return rows, results


def run_forest_sensing(spec: ExperimentSpec, lib: FunnelLibrary, **kw):
    return run_batch(replace(spec, kind="forest_sensing"), lib, **kw)


def run_forest_dynamic(spec: ExperimentSpec, lib: FunnelLibrary, **kw):
    return run_batch(replace(spec, kind="forest_dynamic"), lib, **kw)


def run_maze_sensing(spec: ExperimentSpec, lib: FunnelLibrary, **kw):
    return run_batch(replace(spec, kind="maze_sensing"), lib, **kw)


def run_maze_dynamic(spec: ExperimentSpec, lib: FunnelLibrary, **kw):
    return run_batch(replace(spec, kind="maze_dynamic"), lib, **kw)
