"""Environments, sensing, the disturbed robot and the deterministic replanning loop."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import PlannerConfig
from .funnel import FunnelLibrary, edge_collides
from .geometry import Circle, Obstacle, Rectangle, obstacle_from_dict
from .graph import AugmentedGraph
from .search import INF
from .spatial import ObstacleSet
from .synthesis import library_model, rk4_step

SCENARIO_VERSION = 1
TICK = 0.1


@dataclass(frozen=True)
class Seeds:
    sampling: int = 0
    world: int = 0
    noise: int = 0


@dataclass
class Scenario:
    """A single planning problem.

    ``obstacles`` are the walls or trees present at t = 0; ``windows`` are maze
    openings, closed (present) when their id is in ``closed_windows``.
    """

    bounds: tuple = (-25.0, -25.0, 25.0, 25.0)
    kind: str = "empty"
    obstacles: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    closed_windows: list = field(default_factory=list)
    tree_radius: tuple = (2.0, 4.0)
    change_mode: str = "sensing"
    change_percentage: float = 0.0
    change_period: int = 1
    q_start: tuple = (-20.0, 0.0)
    goal_center: tuple = (20.0, 0.0)
    goal_radius: float = 0.3
    sensor_radius: float = 12.0
    clearance: float = 1.0
    seeds: Seeds = Seeds()
    planner: PlannerConfig = PlannerConfig()
    run_id: str = "run"

    def validate(self):
        x0, y0, x1, y1 = self.bounds
        if not (x0 < x1 and y0 < y1):
            raise ValueError("workspace bounds are empty")
        if self.kind not in ("empty", "forest", "maze"):
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.change_mode not in ("sensing", "dynamic"):
            raise ValueError(f"unknown change mode {self.change_mode!r}")
        if not 0 <= self.change_percentage <= 100:
            raise ValueError("change percentage must lie in [0, 100]")
        if self.change_period < 1 or self.goal_radius <= 0 or self.sensor_radius < 0:
            raise ValueError("change period, goal radius and sensor radius must be positive")
        for name, q in (("start", self.q_start), ("goal", self.goal_center)):
            if not (x0 <= q[0] <= x1 and y0 <= q[1] <= y1):
                raise ValueError(f"{name} lies outside the workspace")
            for obs in self.obstacles + [w for w in self.windows if w.id in set(self.closed_windows)]:
                if obs.contains(q):
                    raise ValueError(f"{name} lies inside obstacle {obs.id}")

    def to_dict(self) -> dict:
        return {
            "format_version": SCENARIO_VERSION,
            "run_id": self.run_id,
            "bounds": list(self.bounds),
            "kind": self.kind,
            "obstacles": [o.to_dict() for o in self.obstacles],
            "windows": [w.to_dict() for w in self.windows],
            "closed_windows": sorted(self.closed_windows),
            "tree_radius": list(self.tree_radius),
            "change_mode": self.change_mode,
            "change_percentage": self.change_percentage,
            "change_period": self.change_period,
            "q_start": list(self.q_start),
            "goal_center": list(self.goal_center),
            "goal_radius": self.goal_radius,
            "sensor_radius": self.sensor_radius,
            "clearance": self.clearance,
            "seeds": asdict(self.seeds),
            "planner": self.planner.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if d.get("format_version") != SCENARIO_VERSION:
            raise ValueError(f"unsupported scenario format_version {d.get('format_version')!r}")
        known = set(cls.__dataclass_fields__) | {"format_version"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k != "format_version"}
        for k in ("bounds", "tree_radius", "q_start", "goal_center"):
            if k in kw:
                kw[k] = tuple(float(v) for v in kw[k])
        kw["obstacles"] = [obstacle_from_dict(o) for o in kw.get("obstacles", [])]
        kw["windows"] = [obstacle_from_dict(o) for o in kw.get("windows", [])]
        kw["closed_windows"] = [int(i) for i in kw.get("closed_windows", [])]
        kw["seeds"] = Seeds(**kw.get("seeds", {}))
        kw["planner"] = PlannerConfig.from_dict(kw.get("planner"))
        sc = cls(**kw)
        sc.validate()
        return sc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_seeds(self, sampling: int, world: int, noise: int, run_id: Optional[str] = None) -> "Scenario":
        return replace(self, seeds=Seeds(sampling, world, noise), run_id=run_id or self.run_id)


def _clear_of(c, r, points, clearance) -> bool:
    return all(math.hypot(c[0] - p[0], c[1] - p[1]) >= r + clearance for p in points)


def random_tree(rng, bounds, radius_range, keep_clear, clearance, tree_id) -> Circle:
    x0, y0, x1, y1 = bounds
    for _ in range(10000):
        c = (rng.uniform(x0, x1), rng.uniform(y0, y1))
        r = rng.uniform(*radius_range)
        if _clear_of(c, r, keep_clear, clearance):
            return Circle(tree_id, c, r)
    raise ValueError("cannot place a tree clear of the protected points")


def forest_scenario(n_trees: int, seeds: Seeds, base: Optional[Scenario] = None, separation: float = 40.0) -> Scenario:
    """Random forest with start and goal ``separation`` apart on a random diameter."""
    base = base or Scenario()
    rng = np.random.default_rng([seeds.world, 1])
    x0, y0, x1, y1 = base.bounds
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    th = rng.uniform(0, 2 * math.pi)
    half = 0.5 * separation
    start = (cx - half * math.cos(th), cy - half * math.sin(th))
    goal = (cx + half * math.cos(th), cy + half * math.sin(th))
    trees = [random_tree(rng, base.bounds, base.tree_radius, (start, goal), base.clearance, i) for i in range(n_trees)]
    sc = replace(base, kind="forest" if n_trees else "empty", obstacles=trees, q_start=start, goal_center=goal, seeds=seeds)
    sc.validate()
    return sc


def load_maze(path=None) -> dict:
    """Maze layout file: walls, toggleable windows and start/goal pairs."""
    if path is None:
        from . import bundled_path

        path = bundled_path("maze.json")
    d = json.loads(Path(path).read_text())
    if d.get("format_version") != 1:
        raise ValueError(f"unsupported maze format_version {d.get('format_version')!r}")
    return {
        "bounds": tuple(d["bounds"]),
        "walls": [obstacle_from_dict(w) for w in d["walls"]],
        "windows": [obstacle_from_dict(w) for w in d["windows"]],
        "closed_windows_dynamic": list(d.get("closed_windows_dynamic", [])),
        "pairs": [(tuple(a), tuple(b)) for a, b in d["pairs"]],
    }


def maze_scenario(pair: int, seeds: Seeds, layout: Optional[dict] = None, mode: str = "sensing", C: float = 0.0, base: Optional[Scenario] = None) -> Scenario:
    """Bundled maze with start/goal pair ``pair``; windows start open when sensing, half closed when dynamic."""
    layout = layout or load_maze()
    base = base or Scenario()
    start, goal = layout["pairs"][pair]
    closed = layout["closed_windows_dynamic"] if mode == "dynamic" else []
    sc = replace(
        base,
        bounds=layout["bounds"],
        kind="maze",
        obstacles=list(layout["walls"]),
        windows=list(layout["windows"]),
        closed_windows=list(closed),
        change_mode=mode,
        change_percentage=C,
        q_start=start,
        goal_center=goal,
        seeds=seeds,
    )
    sc.validate()
    return sc


class World:
    """Ground-truth obstacle set, mutable under dynamic changes."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.active = ObstacleSet(cell=5.0)
        for o in scenario.obstacles:
            self.active.add_obstacle(o)
        closed = set(scenario.closed_windows)
        self.windows = {w.id: w for w in scenario.windows}
        for w in scenario.windows:
            if w.id in closed:
                self.active.add_obstacle(w)
        self.trees = [o for o in scenario.obstacles if isinstance(o, Circle)]
        self.next_id = 1 + max([o.id for o in scenario.obstacles + scenario.windows], default=-1)

    def collides(self, q) -> Optional[Obstacle]:
        for o in self.active.near(q, 0.0):
            if o.contains(q):
                return o
        return None

    def snapshot(self) -> list:
        return sorted(self.active.ids())


def sense(q_robot, radius: float, world: World, known: ObstacleSet):
    """Obstacles revealed in, or removed from, the sensor disc since the last call.

    Any obstacle reaching into the disc is revealed whole.
    Returns ``(added, removed)``; both are empty when nothing changed.
    """
    added, removed = [], []
    q = np.asarray(q_robot, dtype=float)
    for o in world.active.near(q, radius):
        if o.id not in known and _within(o, q, radius):
            added.append(o)
    for o in known.near(q, radius):
        if world.active.get(o.id) is not o and _within(o, q, radius):
            removed.append(o)
    return added, removed


def _within(o: Obstacle, q, radius) -> bool:
    if isinstance(o, Circle):
        return float(np.hypot(*(o.center - q))) <= o.radius + radius
    nearest = np.clip(q, o.lo, o.hi)
    return float(np.hypot(*(nearest - q))) <= radius


def apply_world_change(world: World, C: float, rng, protect=()) -> list:
    """Replace ``floor(C/100 N_t)`` trees or toggle ``floor(C/100 N_w)`` windows.

    Nothing is placed over the protected points (start, goal, robot).
    Returns the tags of the changes made.
    """
    if not 0 <= C <= 100:
        raise ValueError("change percentage must lie in [0, 100]")
    sc = world.scenario
    events = []
    protect = [tuple(p) for p in protect]
    if world.trees:
        n = int(math.floor(C / 100.0 * len(world.trees) + 1e-9))
        if n == 0:
            return events
        idx = sorted(rng.choice(len(world.trees), size=n, replace=False).tolist())
        for i in idx:
            old = world.trees[i]
            world.active.remove_obstacle(old.id)
            new = random_tree(rng, sc.bounds, sc.tree_radius, protect, sc.clearance, world.next_id)
            world.next_id += 1
            world.trees[i] = new
            world.active.add_obstacle(new)
            events.append(f"replace {old.id}->{new.id}")
    elif world.windows:
        ids = sorted(world.windows)
        n = int(math.floor(C / 100.0 * len(ids) + 1e-9))
        if n == 0:
            return events
        for wid in sorted(rng.choice(ids, size=n, replace=False).tolist()):
            w = world.windows[wid]
            if wid in world.active:
                world.active.remove_obstacle(wid)
                events.append(f"open {wid}")
            elif all(not w.contains(p) and not _within(w, np.asarray(p), sc.clearance) for p in protect):
                world.active.add_obstacle(w)
                events.append(f"close {wid}")
    return events


def sample_free(rng, bounds, known: Optional[ObstacleSet] = None, focus=None, p_local: float = 0.3, max_rejections: int = 100):
    """Uniform sample outside known obstacles, drawn from ``focus = (center, radius)`` with probability ``p_local``."""
    x0, y0, x1, y1 = bounds
    q = None
    for _ in range(max_rejections):
        if focus is not None and rng.random() < p_local:
            (cx, cy), r = focus
            rr = r * math.sqrt(rng.random())
            th = rng.uniform(0, 2 * math.pi)
            q = (cx + rr * math.cos(th), cy + rr * math.sin(th))
            if not (x0 <= q[0] <= x1 and y0 <= q[1] <= y1):
                continue
        else:
            q = (rng.uniform(x0, x1), rng.uniform(y0, y1))
        if known is None or not any(o.contains(q) for o in known.near(q, 0.0)):
            return q
    return (rng.uniform(x0, x1), rng.uniform(y0, y1))


class RobotSim:
    """Point robot with double-integrator dynamics tracking funnel-edges under bounded noise."""

    def __init__(self, lib: FunnelLibrary, q0, noise_seed: int, w_max: Optional[float] = None):
        self.model = library_model(lib)
        self.w_max = self.model.w_max if w_max is None else float(w_max)
        self.rng = np.random.default_rng([noise_seed, 3])
        self.x = np.zeros(self.model.state_dim)
        self.x[:2] = q0
        self.edge = None
        self.knot = 0
        self.setpoint = np.array(q0, dtype=float)
        self.length = 0.0
        self.dt = 0.01
        self.substeps = int(round(TICK / self.dt))

    @property
    def q(self) -> np.ndarray:
        return self.x[:2].copy()

    @property
    def tracking(self) -> bool:
        return self.edge is not None

    def start_edge(self, edge):
        self.edge = edge
        self.knot = 0
        self.setpoint = np.array(edge.q_to, dtype=float)

    def hold(self, q):
        self.edge = None
        self.knot = 0
        self.setpoint = np.asarray(q, dtype=float).copy()

    def normalized_value(self) -> float:
        if self.edge is None:
            return float("nan")
        return self.edge.state_value(self.x, self.knot)

    def _noise(self):
        if self.w_max <= 0:
            return np.zeros(self.model.B_w.shape[1])
        r = self.w_max * math.sqrt(self.rng.random())
        th = self.rng.uniform(0, 2 * math.pi)
        return np.array([r * math.cos(th), r * math.sin(th)])

    def step(self, world: Optional[World] = None):
        """Advance one motion tick; returns the obstacle hit, if any."""
        m = self.model
        if self.edge is not None:
            # the tracking law u0 + K (x0 - x) equals regulation to the shifted origin
            shift = self.edge.cyclic_shift
            s = np.zeros(m.state_dim)
            s[:2] = shift
        else:
            s = np.zeros(m.state_dim)
            s[:2] = self.setpoint
        hit = None
        for _ in range(self.substeps):
            w = self._noise()
            prev = self.x[:2].copy()
            self.x = rk4_step(lambda x: m.Acl @ (x - s) + m.B_w @ w, self.x, self.dt)
            self.length += float(np.hypot(*(self.x[:2] - prev)))
            if world is not None and hit is None:
                hit = world.collides(self.x[:2])
        if self.edge is not None:
            self.knot += 1
        return hit


def invariance_trials(edge, n: int, seed: int, level: float = 0.9, w_max: Optional[float] = None) -> np.ndarray:
    """Per-trajectory max normalised V over the knots of ``edge`` for ``n`` disturbed runs.

    Starts are drawn with V(0) <= ``level``: half on that level set, half inside it.
    """
    m = library_model(edge.lib)
    w = m.w_max if w_max is None else float(w_max)
    rng = np.random.default_rng([seed, 5])
    dim = m.state_dim
    z = rng.standard_normal((n, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    radius = np.ones(n)
    radius[n // 2 :] = rng.random(n - n // 2) ** (1.0 / dim)
    L = np.linalg.cholesky(edge.state_shape(0))
    x = edge.nominal_state(0) + np.linalg.solve(L.T, (z * (radius * math.sqrt(level))[:, None]).T).T
    s = np.zeros(dim)
    s[:2] = edge.cyclic_shift
    dt = 0.01
    sub = int(round(TICK / dt))
    Acl, Bw = m.Acl, m.B_w

    def f(x, wk):
        return (x - s) @ Acl.T + wk @ Bw.T

    def value(x, j):
        d = x - edge.nominal_state(j)
        return np.einsum("ij,jk,ik->i", d, edge.state_shape(j), d)

    worst = value(x, 0)
    for j in range(1, edge.n_knots):
        for _ in range(sub):
            r = w * np.sqrt(rng.random(n))
            th = rng.uniform(0.0, 2 * math.pi, n)
            wk = np.column_stack([r * np.cos(th), r * np.sin(th)])
            k1 = f(x, wk)
            k2 = f(x + 0.5 * dt * k1, wk)
            k3 = f(x + 0.5 * dt * k2, wk)
            k4 = f(x + dt * k3, wk)
            x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        worst = np.maximum(worst, value(x, j))
    return worst


@dataclass
class RunResult:
    status: str
    l_T: float
    ticks: int
    trace: list
    max_V: float = 0.0
    invariance_violations: int = 0
    preplan_iterations: int = 0
    traversed: list = field(default_factory=list)
    graph_nodes: int = 0
    graph: Optional[AugmentedGraph] = None

    def summary(self) -> dict:
        return {
            "status": self.status,
            "l_T": self.l_T,
            "ticks": self.ticks,
            "max_V": self.max_V,
            "invariance_violations": self.invariance_violations,
            "preplan_iterations": self.preplan_iterations,
            "graph_nodes": self.graph_nodes,
            "traversed": [e.id for e in self.traversed],
        }


def _r(x, nd=9):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else round(float(x), nd)


class Planner:
    """Roadmap, search tree and known-obstacle model owned by one run."""

    def __init__(self, scenario: Scenario, lib: FunnelLibrary, known: ObstacleSet):
        self.sc = scenario
        self.cfg = scenario.planner
        self.known = known
        self.graph = AugmentedGraph(lib, scenario.goal_center, scenario.goal_radius, known, self.cfg)
        self.rng = np.random.default_rng([scenario.seeds.sampling, 2])
        self.focus = None
        self.iterations = 0

    def grow(self, n: int):
        for _ in range(n):
            q = sample_free(self.rng, self.sc.bounds, self.known, self.focus, self.cfg.p_local, self.cfg.max_rejections)
            self.graph.sample_iteration(q)
            self.iterations += 1

    def repair(self, focus_q, starts=()):
        self.graph.tree.set_robot(focus_q)
        self.graph.tree.compute_shortest_path_tree(starts)

    def start_found(self, q) -> bool:
        self.repair(q)
        return self.graph.best_inlet(q, rest=True, level=self.cfg.rest_entry_level) is not None


def pipx_run(scenario: Scenario, lib: FunnelLibrary, record_trace: bool = True) -> RunResult:
    """Pre-plan, then interleave sensing, planning and motion until success, timeout or collision."""
    scenario.validate()
    cfg = scenario.planner
    world = World(scenario)
    known = ObstacleSet(cell=5.0)
    if scenario.change_mode == "dynamic":
        for o in world.active:
            known.add_obstacle(o)
    planner = Planner(scenario, lib, known)
    graph = planner.graph
    world_rng = np.random.default_rng([scenario.seeds.world, 4])
    robot = RobotSim(lib, scenario.q_start, scenario.seeds.noise)
    trace: list = []
    goal = np.asarray(scenario.goal_center, dtype=float)

    def do_sense(events):
        added, removed = sense(robot.q, scenario.sensor_radius, world, known)
        for o in removed:
            known.remove_obstacle(o.id)
        for o in added:
            known.add_obstacle(o)
        if added or removed:
            graph.modify_edge_costs(added, removed)
            planner.focus = (tuple(robot.q), scenario.sensor_radius)
            events.append(f"SENSE +{len(added)} -{len(removed)}")

    # pre-planning: the start is offered as the first sample, then the budget is spent
    do_sense([])
    graph.sample_iteration(scenario.q_start)
    cap = 2 * cfg.preplan_iterations
    while planner.iterations < cap:
        planner.grow(100)
        found = planner.start_found(scenario.q_start)
        if not found:
            graph.sample_iteration(scenario.q_start)
        if found and planner.iterations >= cfg.preplan_iterations:
            break
    planner.repair(robot.q)

    status = "TIMEOUT"
    idle = 0
    max_V = 0.0
    violations = 0
    traversed = []
    tick = 0
    while tick < cfg.max_ticks:
        tick += 1
        events = []
        if scenario.change_mode == "dynamic" and tick % scenario.change_period == 0:
            ch = apply_world_change(world, scenario.change_percentage, world_rng, (scenario.q_start, scenario.goal_center, tuple(robot.q)))
            if ch:
                events.append(f"CHANGE {len(ch)}")
        if tick % cfg.sense_every == 0:
            do_sense(events)
        if tick % cfg.plan_every == 0:
            planner.grow(cfg.samples_per_tick)
            if robot.tracking:
                head = graph.motion_edges[robot.edge.id].head
                planner.repair(robot.edge.q_to, [head])
            else:
                planner.repair(robot.q)
            events.append("PLAN")
        if tick % cfg.move_every == 0:
            if robot.tracking:
                e = graph.motion_edges[robot.edge.id]
                if e.cost == INF:
                    rest = _remaining_tube(robot.edge, robot.knot)
                    if edge_collides(rest, known.near(rest.bound_center, rest.bound_radius)):
                        robot.hold(robot.q)
                        events.append("ABORT")
            if not robot.tracking:
                planner.repair(robot.q)
                path = graph.extract_path(robot.q, state=robot.x)
                if path:
                    robot.start_edge(path[0].funnel)
                    traversed.append(path[0])
            if robot.tracking:
                idle = 0
            else:
                idle += 1
            active = robot.edge.id if robot.tracking else None
            hit = robot.step(world)
            events.append("MOVE")
            V = robot.normalized_value()
            if not math.isnan(V):
                max_V = max(max_V, V)
                if V > 1.0:
                    violations += 1
                    events.append("VIOLATION")
            if robot.tracking and robot.knot >= robot.edge.n_knots - 1:
                robot.hold(robot.edge.q_to)
            if record_trace:
                trace.append(
                    {
                        "tick": tick,
                        "t": _r(tick * TICK, 6),
                        "state": [_r(v) for v in robot.x],
                        "V": _r(V),
                        "funnel": active,
                        "events": events,
                    }
                )
            if hit is not None:
                status = "COLLISION"
                break
            if np.hypot(*(robot.q - goal)) <= scenario.goal_radius:
                status = "SUCCESS"
                break
            if idle > cfg.idle_limit:
                status = "TIMEOUT"
                break
    return RunResult(status, robot.length, tick, trace, max_V, violations, planner.iterations, traversed, len(graph.nodes), graph)


class _Tube:
    """Remaining knots of a funnel-edge, shaped for ``edge_collides``."""

    def __init__(self, edge, start):
        self.edge = edge
        self.start = start
        self.centers = edge.centers[start:]
        self.radii = edge.radii[start:]
        self.radii_min = edge.radii_min[start:]
        self.n_knots = len(self.centers)
        lo = np.min(self.centers - self.radii[:, None], axis=0)
        hi = np.max(self.centers + self.radii[:, None], axis=0)
        self.bound_center = 0.5 * (lo + hi)
        self.bound_radius = float(np.max(np.linalg.norm(self.centers - self.bound_center, axis=1) + self.radii))

    def knot_shape(self, j):
        return self.edge.knot_shape(self.start + j)


def _remaining_tube(edge, knot):
    return _Tube(edge, min(knot, edge.n_knots - 1))


def write_trace(result: RunResult, scenario: Scenario, path):
    """Line-delimited JSON: a header record, one record per tick, a result record."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"format_version": 1, "run_id": scenario.run_id, "type": "header", "scenario": scenario.to_dict()}, sort_keys=True) + "\n")
        for rec in result.trace:
            fh.write(json.dumps(dict(rec, type="tick"), sort_keys=True) + "\n")
        fh.write(json.dumps(dict(result.summary(), type="result", l_T=_r(result.l_T), max_V=_r(result.max_V)), sort_keys=True) + "\n")
