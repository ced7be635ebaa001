import math
from dataclasses import replace

import numpy as np
import pytest

from funnelplan.config import PlannerConfig
from funnelplan.funnel import FunnelEdge, compossible_exact
from funnelplan.geometry import Circle, Rectangle
from funnelplan.spatial import ObstacleSet
from funnelplan.world import (
    RobotSim,
    Scenario,
    Seeds,
    World,
    apply_world_change,
    forest_scenario,
    load_maze,
    maze_scenario,
    pipx_run,
    sample_free,
    sense,
    write_trace,
)

# scenarios


def test_scenario_round_trip(tmp_path):
    sc = forest_scenario(20, Seeds(1, 2, 3))
    p = tmp_path / "s.json"
    sc.save(p)
    back = Scenario.load(p)
    assert back.to_dict() == sc.to_dict()
    assert math.dist(sc.q_start, sc.goal_center) == pytest.approx(40.0)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(q_start=(100.0, 0.0)).validate()
    with pytest.raises(ValueError):
        Scenario(obstacles=[Circle(0, (-20.0, 0.0), 1.0)]).validate()
    with pytest.raises(ValueError):
        Scenario(change_percentage=150).validate()
    with pytest.raises(ValueError):
        Scenario.from_dict(dict(Scenario().to_dict(), bogus=1))
    with pytest.raises(ValueError):
        Scenario.from_dict(dict(Scenario().to_dict(), format_version=2))


def test_forest_keeps_start_and_goal_clear():
    for seed in range(20):
        sc = forest_scenario(150, Seeds(seed, seed, seed))
        assert len(sc.obstacles) == 150
        for o in sc.obstacles:
            for q in (sc.q_start, sc.goal_center):
                assert math.dist(o.center, q) >= o.radius + sc.clearance
            assert 2.0 <= o.radius <= 4.0


def test_bundled_maze_layout():
    m = load_maze()
    assert len(m["walls"]) == 20 and len(m["windows"]) == 10 and len(m["pairs"]) == 10
    for pair in range(10):
        sc = maze_scenario(pair, Seeds())
        sc.validate()
        assert sc.closed_windows == []
    assert maze_scenario(0, Seeds(), mode="dynamic").closed_windows == m["closed_windows_dynamic"]


# sensing


def test_sense_examples():
    sc = Scenario(
        obstacles=[Circle(0, (20.0, 20.0), 1.0), Rectangle(1, (-5.0, 10.0), (5.0, 11.0))],
    )
    world = World(sc)
    known = ObstacleSet()
    added, removed = sense((0.0, 0.0), 12.0, world, known)
    assert [o.id for o in added] == [1] and removed == []
    for o in added:
        known.add_obstacle(o)
    assert known.get(1).hi[0] == 5.0  # revealed whole
    assert sense((0.0, 0.0), 12.0, world, known) == ([], [])


def test_sense_reports_removals():
    sc = forest_scenario(10, Seeds(0, 0, 0))
    world = World(sc)
    known = ObstacleSet()
    for o in sense((0, 0), 100.0, world, known)[0]:
        known.add_obstacle(o)
    apply_world_change(world, 100, np.random.default_rng(0))
    added, removed = sense((0, 0), 100.0, world, known)
    assert len(added) == 10 and len(removed) == 10


# world changes


def test_world_change_examples():
    sc = forest_scenario(10, Seeds(0, 0, 0))
    world = World(sc)
    before = world.snapshot()
    assert apply_world_change(world, 0, np.random.default_rng(0)) == []
    assert world.snapshot() == before
    apply_world_change(world, 100, np.random.default_rng(0))
    assert not set(world.snapshot()) & set(before)
    with pytest.raises(ValueError):
        apply_world_change(world, 101, np.random.default_rng(0))


def test_tree_count_invariant_and_protection():
    sc = forest_scenario(30, Seeds(1, 1, 1))
    world = World(sc)
    rng = np.random.default_rng(1)
    protect = (sc.q_start, sc.goal_center, (0.0, 0.0))
    for _ in range(1000):
        apply_world_change(world, float(rng.uniform(0, 100)), rng, protect)
        assert len(world.snapshot()) == 30
    for o in world.active:
        for q in protect:
            assert math.dist(o.center, q) >= o.radius + sc.clearance


def test_window_toggles():
    sc = maze_scenario(0, Seeds(), mode="dynamic", C=50)
    world = World(sc)
    n_walls = len(sc.obstacles)
    rng = np.random.default_rng(0)
    for _ in range(100):
        ev = apply_world_change(world, 50, rng, (sc.q_start, sc.goal_center))
        assert len(ev) <= 5
        assert n_walls <= len(world.snapshot()) <= n_walls + 10


# sampling


def test_sample_free_uniform_and_focus():
    rng = np.random.default_rng(0)
    b = (-25.0, -25.0, 25.0, 25.0)
    pts = np.array([sample_free(rng, b) for _ in range(2000)])
    assert pts.min() >= -25 and pts.max() <= 25
    focus, n = ((5.0, 5.0), 5.0), 10_000
    pts = np.array([sample_free(rng, b, None, focus, 0.5) for _ in range(n)])
    inside = np.hypot(pts[:, 0] - 5, pts[:, 1] - 5) <= 5
    p = 0.5 + 0.5 * math.pi * 25 / 2500
    assert abs(inside.mean() - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_sample_free_avoids_known_and_caps():
    rng = np.random.default_rng(0)
    known = ObstacleSet()
    known.add_obstacle(Rectangle(0, (-25.0, -25.0), (0.0, 25.0)))
    for _ in range(500):
        assert sample_free(rng, (-25, -25, 25, 25), known)[0] > 0
    full = ObstacleSet()
    full.add_obstacle(Rectangle(1, (-30.0, -30.0), (30.0, 30.0)))
    q = sample_free(rng, (-25, -25, 25, 25), full, max_rejections=5)
    assert -25 <= q[0] <= 25


# robot


def test_zero_noise_tracks_nominal(lib):
    e = FunnelEdge(lib, 0, [0.0, 0.0], 0)
    robot = RobotSim(lib, (5.0, 0.0), 0, w_max=0.0)
    robot.start_edge(e)
    for j in range(1, e.n_knots):
        robot.step()
        assert np.max(np.abs(robot.x - e.nominal_state(j))) < 1e-6
        assert robot.normalized_value() < 1e-9


def test_single_funnel_reaches_goal(lib):
    e = FunnelEdge(lib, 3, [2.0, -1.0], 0)
    robot = RobotSim(lib, e.centers[0], 7)
    robot.start_edge(e)
    T_f = lib.funnels[e.library_id].knot_times[-1]
    for tick in range(int(math.ceil(1.2 * T_f / 0.1))):
        robot.step()
        if robot.knot < e.n_knots:
            assert robot.normalized_value() <= 1.0
        if math.dist(robot.q, (2.0, -1.0)) <= 0.3:
            break
    else:
        pytest.fail("robot did not reach the goal ball in time")


def test_robot_reports_collisions(lib):
    world = World(Scenario(obstacles=[Circle(0, (2.5, 0.0), 0.5)]))
    robot = RobotSim(lib, (5.0, 0.0), 0, w_max=0.0)
    robot.start_edge(FunnelEdge(lib, 0, [0.0, 0.0], 0))
    hits = [robot.step(world) for _ in range(30)]
    assert any(h is not None and h.id == 0 for h in hits)


# main loop


def test_empty_world_success_and_determinism(lib, tmp_path):
    sc = forest_scenario(0, Seeds(3, 3, 3))
    a = pipx_run(sc, lib)
    b = pipx_run(sc, lib)
    assert a.status == "SUCCESS" and a.invariance_violations == 0 and a.max_V <= 1.0
    assert a.summary() == b.summary() and a.trace == b.trace
    write_trace(a, sc, tmp_path / "a.jsonl")
    write_trace(b, sc, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    for x, y in zip(a.traversed, a.traversed[1:]):
        assert compossible_exact(x.funnel, y.funnel)
        assert np.allclose(x.funnel.q_to, y.funnel.q_from)


def test_forest_success_is_collision_free(lib):
    sc = forest_scenario(20, Seeds(5, 5, 5))
    res = pipx_run(sc, lib)
    assert res.status == "SUCCESS"
    states = np.array([r["state"][:2] for r in res.trace])
    for o in sc.obstacles:
        assert np.all(np.hypot(states[:, 0] - o.center[0], states[:, 1] - o.center[1]) > o.radius)


def test_walled_goal_times_out(lib):
    g = (15.0, 0.0)
    walls = [
        Rectangle(0, (12.0, -3.0), (18.0, -2.0)),
        Rectangle(1, (12.0, 2.0), (18.0, 3.0)),
        Rectangle(2, (12.0, -3.0), (13.0, 3.0)),
        Rectangle(3, (17.0, -3.0), (18.0, 3.0)),
    ]
    cfg = replace(PlannerConfig(), preplan_iterations=300, idle_limit=30)
    sc = Scenario(obstacles=walls, q_start=(-15.0, 0.0), goal_center=g, planner=cfg, change_mode="dynamic")
    res = pipx_run(sc, lib, record_trace=False)
    assert res.status == "TIMEOUT"


def test_invalid_scenario_rejected(lib):
    with pytest.raises(ValueError):
        pipx_run(Scenario(q_start=(99.0, 0.0)), lib)
