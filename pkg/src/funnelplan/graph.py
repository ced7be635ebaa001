"""Augmented bipartite funnel graph and its incremental construction.

Every sampled configuration owns the inlet nodes of funnels leaving it and the
outlet nodes of funnels arriving at it.  Motion-edges run inlet -> outlet and
carry the funnel's arc length; zero-cost continuity-edges run outlet -> inlet
wherever the two funnels are compossible.  A single goal node terminates every
funnel whose outlet lies in the goal region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import TOL, PlannerConfig
from .funnel import FunnelEdge, FunnelLibrary, InletIndex, compossible, edge_collides, steer
from .geometry import Ellipsoid, contains_ellipsoid
from .search import INF, SearchTree
from .spatial import CircleGrid, ObstacleSet, PointIndex

INLET, OUTLET, GOAL = "INLET", "OUTLET", "GOAL"


class CompositeNode:
    __slots__ = ("id", "config", "edge", "role", "anchor_idx")

    def __init__(self, nid, config, edge, role, anchor_idx):
        self.id = nid
        self.config = config
        self.edge = edge
        self.role = role
        self.anchor_idx = anchor_idx

    @property
    def edge_ref(self):
        return None if self.edge is None else self.edge.id

    def region(self, goal_region: Optional[Ellipsoid] = None) -> Ellipsoid:
        if self.role == INLET:
            return self.edge.inlet
        if self.role == OUTLET:
            return self.edge.outlet
        return goal_region


class MotionEdge:
    __slots__ = ("id", "tail", "head", "funnel", "cost", "prev_cost", "blocked_by")

    def __init__(self, eid, tail, head, funnel: FunnelEdge):
        self.id = eid
        self.tail = tail
        self.head = head
        self.funnel = funnel
        self.cost = funnel.cost
        self.prev_cost = funnel.cost
        self.blocked_by: set = set()

    @property
    def blocked(self) -> bool:
        return self.cost == INF


@dataclass
class AnchorRecord:
    idx: int
    config: tuple
    inlets: list = field(default_factory=list)
    outlets: list = field(default_factory=list)


def r_ball(num_vertices: int, r0: float, d: int, eps: float) -> float:
    """Shrinking connection radius ``min(r0 (log n / n)^(1/d), eps)``; ``eps`` below two vertices."""
    if num_vertices < 1:
        raise ValueError("need at least one vertex")
    if num_vertices < 2:
        return eps
    return min(r0 * (math.log(num_vertices) / num_vertices) ** (1.0 / d), eps)


def safe_heuristic_scale(lib: FunnelLibrary, cfg: PlannerConfig) -> float:
    """Largest multiple of Euclidean distance that never exceeds a steerable edge's cost.

    Truncated edges cost at least their endpoint distance; untruncated ones cost
    the full nominal length while spanning up to ``epsilon``.
    """
    full = min(float(e["remaining"][0]) for e in lib.index.entries)
    return cfg.heuristic_scale * min(1.0, full / cfg.epsilon)


def _quantize(q) -> tuple:
    s = TOL.node_quantum
    return (round(q[0] / s), round(q[1] / s))


class AugmentedGraph:
    def __init__(
        self,
        lib: FunnelLibrary,
        goal_center,
        goal_radius: float,
        obstacles: Optional[ObstacleSet] = None,
        cfg: PlannerConfig = PlannerConfig(),
    ):
        self.lib = lib
        self.cfg = cfg
        self.obstacles = obstacles if obstacles is not None else ObstacleSet()
        self.goal_center = (float(goal_center[0]), float(goal_center[1]))
        self.goal_radius = float(goal_radius)
        self.goal_region = Ellipsoid(np.array(self.goal_center), np.eye(2) / self.goal_radius**2)
        self.nodes: list = []
        self.succ: list = []
        self.pred: list = []
        self.motion_edges: list = []
        self.continuity: set = set()
        self.anchors: list = []
        self.anchor_of: dict = {}
        self.node_key: dict = {}
        self.points = PointIndex()
        self.inlets = InletIndex()
        self.edge_grid = CircleGrid(cell=5.0)
        self.blocking: dict = {}
        goal_anchor = self._anchor(self.goal_center)
        self.goal = self._new_node(self.goal_center, None, GOAL, goal_anchor.idx)
        self.tree = SearchTree(self, safe_heuristic_scale(lib, cfg))

    # search protocol

    def out_edges(self, v):
        for w, e in self.succ[v]:
            yield w, (0.0 if e is None else e.cost)

    def in_edges(self, v):
        for u, e in self.pred[v]:
            yield u, (0.0 if e is None else e.cost)

    def anchor(self, v):
        return self.nodes[v].config

    # construction helpers

    def _anchor(self, q) -> AnchorRecord:
        key = _quantize(q)
        rec = self.anchor_of.get(key)
        if rec is None:
            rec = AnchorRecord(len(self.anchors), (float(q[0]), float(q[1])))
            self.anchors.append(rec)
            self.anchor_of[key] = rec
            self.points.add(rec.config)
        return rec

    def _new_node(self, config, edge, role, anchor_idx) -> int:
        nid = len(self.nodes)
        self.nodes.append(CompositeNode(nid, config, edge, role, anchor_idx))
        self.succ.append([])
        self.pred.append([])
        return nid

    def _link(self, u, v, medge):
        self.succ[u].append((v, medge))
        self.pred[v].append((u, medge))

    def add_continuity(self, o, i) -> bool:
        if (o, i) in self.continuity:
            return False
        self.continuity.add((o, i))
        self._link(o, i, None)
        return True

    def get_node(self, F: FunnelEdge):
        """Inlet/outlet nodes of ``F``, created on first use and keyed by (anchor, funnel, role)."""
        a = self._anchor(F.q_from)
        b = self._anchor(F.q_to)
        ref = (F.library_id, F.truncate_from_knot, _quantize(F.cyclic_shift))
        ki = (_quantize(a.config), ref, INLET)
        ko = (_quantize(b.config), ref, OUTLET)
        if ki in self.node_key:
            return self.node_key[ki], self.node_key[ko]
        i = self._new_node(a.config, F, INLET, a.idx)
        o = self._new_node(b.config, F, OUTLET, b.idx)
        self.node_key[ki] = i
        self.node_key[ko] = o
        return i, o

    def add_funnel(self, F: FunnelEdge) -> dict:
        """Insert a funnel-edge with its motion-edge and every continuity-edge it enables."""
        summary = {"motion": 0, "continuity": 0, "outlets": []}
        n_before = len(self.nodes)
        i, o = self.get_node(F)
        if len(self.nodes) == n_before:
            return summary
        a = self.anchors[self.nodes[i].anchor_idx]
        b = self.anchors[self.nodes[o].anchor_idx]
        e = MotionEdge(len(self.motion_edges), i, o, F)
        F.id = e.id
        self.motion_edges.append(e)
        self._link(i, o, e)
        summary["motion"] = 1
        for j in b.inlets:
            if compossible(F, self.nodes[j].edge):
                summary["continuity"] += self.add_continuity(o, j)
        for p in a.outlets:
            if compossible(self.nodes[p].edge, F):
                summary["continuity"] += self.add_continuity(p, i)
        if b.idx == self.nodes[self.goal].anchor_idx and contains_ellipsoid(self.goal_region, F.outlet):
            summary["continuity"] += self.add_continuity(o, self.goal)
        a.inlets.append(i)
        b.outlets.append(o)
        self.inlets.add(F)
        self.edge_grid.add(e.id, e, F.bound_center, F.bound_radius)
        self.tree.update_vertex(o)
        summary["outlets"].append(o)
        return summary

    # roadmap growth

    def extend(self, q_rand, eps: float):
        """Step at most ``eps`` from the nearest anchor toward ``q_rand``; ``None`` if already covered by a funnel that reaches the goal."""
        idx, d = self.points.nearest(q_rand)
        if idx is None:
            return None
        q_near = np.array(self.points.points[idx])
        q_rand = np.asarray(q_rand, dtype=float)
        q_new = q_rand if d <= eps else q_near + (eps / d) * (q_rand - q_near)
        # dead-end funnels do not make a sample redundant
        if self.in_search_funnel(q_new, rest=True, reaching_goal=True):
            return None
        return q_new

    def find_nearest_neighbors(self, q, r: float) -> list:
        """Anchor records within ``r`` of ``q`` (excluding ``q`` itself), nearest first."""
        qq = _quantize(q)
        recs = [self.anchors[i] for i in self.points.within(q, r)]
        recs = [a for a in recs if _quantize(a.config) != qq]
        recs.sort(key=lambda a: (math.hypot(a.config[0] - q[0], a.config[1] - q[1]), a.idx))
        return recs

    def construct_search_graph(self, q_new, neighbors) -> dict:
        summary = {"motion": 0, "continuity": 0, "outlets": []}
        if not neighbors:
            return summary
        rec = self._anchor(q_new)
        level = self.cfg.rest_entry_level
        for n in neighbors:
            for q1, q2 in ((rec.config, n.config), (n.config, rec.config)):
                F = steer(q1, q2, self.lib, self.obstacles, rest_level=level)
                if F is None:
                    continue
                s = self.add_funnel(F)
                summary["motion"] += s["motion"]
                summary["continuity"] += s["continuity"]
                summary["outlets"] += s["outlets"]
        return summary

    def sample_iteration(self, q_rand) -> Optional[dict]:
        """One roadmap-growth step: extend, neighbour query, funnel wiring."""
        q_new = self.extend(q_rand, self.cfg.epsilon)
        if q_new is None:
            return None
        r = r_ball(len(self.anchors), self.cfg.r0, self.cfg.dimension, self.cfg.epsilon)
        neighbors = self.find_nearest_neighbors(q_new, r)
        return self.construct_search_graph(q_new, neighbors)

    # membership and obstacles

    def containing_inlets(self, q, state=None, rest: bool = False, level: float = 1.0) -> list:
        """Inlet node ids of unblocked funnels containing ``q``.

        With ``state`` (or ``rest``) the full-state inlet at normalised ``level`` is used.
        """
        q = np.asarray(q, dtype=float)
        out = []
        for F in self.inlets.candidates(q):
            e = self.motion_edges[F.id]
            if e.cost == INF or not F.inlet_contains(q):
                continue
            if state is not None or rest:
                x = F.rest_state(q) if state is None else state
                if F.state_value(x, 0) > level + TOL.membership:
                    continue
            out.append(e.tail)
        return sorted(out)

    def in_search_funnel(self, q, rest: bool = False, reaching_goal: bool = False) -> bool:
        """``reaching_goal`` ignores funnels with no known finite path to the goal."""
        inlets = self.containing_inlets(q, rest=rest)
        if reaching_goal:
            g, lmc = self.tree.g, self.tree.lmc
            return any(min(g.get(v, INF), lmc.get(v, INF)) < INF for v in inlets)
        return bool(inlets)

    def modify_edge_costs(self, added=(), removed=()) -> int:
        """Block motion-edges overlapping added obstacles; restore those freed by removals."""
        touched = set()
        for obs in removed:
            for eid in sorted(self.blocking.pop(obs.id, ())):
                e = self.motion_edges[eid]
                e.blocked_by.discard(obs.id)
                if not e.blocked_by and e.cost == INF:
                    e.cost = e.prev_cost
                    touched.add(e.tail)
        for obs in added:
            c, r = obs.bounding_circle
            for e in self.edge_grid.near(c, r):
                if obs.id in e.blocked_by:
                    continue
                if edge_collides(e.funnel, [obs]):
                    e.blocked_by.add(obs.id)
                    self.blocking.setdefault(obs.id, set()).add(e.id)
                    if e.cost != INF:
                        e.cost = INF
                        touched.add(e.tail)
        for v in sorted(touched):
            self.tree.update_vertex(v)
        return len(touched)

    # path extraction

    def best_inlet(self, q, state=None, rest: bool = False, level: float = 1.0):
        g = self.tree.g
        cands = [(g.get(v, INF), v) for v in self.containing_inlets(q, state, rest, level)]
        cands = [c for c in cands if c[0] < INF]
        return min(cands)[1] if cands else None

    def extract_path(self, q_robot, state=None, rest: bool = False, level: float = 1.0) -> Optional[list]:
        """Motion-edges from the best inlet containing the robot to the goal."""
        start = self.best_inlet(q_robot, state, rest, level)
        if start is None:
            return None
        nodes = self.tree.path_nodes(start)
        if nodes is None:
            return None
        path = []
        for u, v in zip(nodes, nodes[1:]):
            if self.nodes[u].role == INLET:
                e = next((e for w, e in self.succ[u] if w == v and e is not None), None)
                if e is None or e.cost == INF:
                    return None
                path.append(e)
        return path

    # diagnostics

    def check_invariants(self):
        """Bipartiteness, degree rules and zero-cost continuity; raises AssertionError."""
        for n in self.nodes:
            outs, ins = self.succ[n.id], self.pred[n.id]
            m_out = [e for _, e in outs if e is not None]
            m_in = [e for _, e in ins if e is not None]
            if n.role == INLET:
                assert len(m_out) == 1 and not m_in, f"inlet {n.id} degree"
                assert all(self.nodes[w].role == OUTLET for w, e in outs if e is not None)
                assert all(self.nodes[u].role in (OUTLET,) for u, e in ins if e is None)
            elif n.role == OUTLET:
                assert len(m_in) == 1 and not m_out, f"outlet {n.id} degree"
                assert all(self.nodes[w].role in (INLET, GOAL) for w, e in outs)
            else:
                assert not outs and not m_in
        for o, i in self.continuity:
            assert self.nodes[o].role == OUTLET and self.nodes[i].role in (INLET, GOAL)
        for e in self.motion_edges:
            assert self.nodes[e.tail].role == INLET and self.nodes[e.head].role == OUTLET
            assert e.cost == INF or e.cost == e.prev_cost

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "goal": {"center": list(self.goal_center), "radius": self.goal_radius},
            "nodes": [
                {"id": n.id, "config": list(n.config), "role": n.role, "edge": None if n.edge is None else n.edge.id}
                for n in self.nodes
            ],
            "motion_edges": [
                {
                    "id": e.id,
                    "tail": e.tail,
                    "head": e.head,
                    "cost": None if e.cost == INF else e.cost,
                    "prev_cost": e.prev_cost,
                    "library_id": e.funnel.library_id,
                    "shift": e.funnel.cyclic_shift.tolist(),
                    "truncate_from_knot": e.funnel.truncate_from_knot,
                }
                for e in self.motion_edges
            ],
            "continuity_edges": sorted([list(p) for p in self.continuity]),
        }
