"""Incremental shortest-path tree rooted at the goal, in the style of D* Lite.

The search runs backward: ``g(v)`` is the cost-to-goal of node ``v`` and the
heuristic measures distance from a node's anchor to the robot.  The graph is
accessed through a small protocol:

``out_edges(v)`` / ``in_edges(v)``
    iterables of ``(neighbor, cost)``
``anchor(v)``
    planar anchor configuration
``goal``
    id of the root node
"""
from __future__ import annotations

import heapq
import math
from typing import Iterable, Optional

INF = math.inf


class PriorityQueue:
    """Binary min-heap on ``(k1, k2, id)`` with an id -> slot map for removal."""

    __slots__ = ("heap", "pos")

    def __init__(self):
        self.heap: list = []
        self.pos: dict = {}

    def __len__(self):
        return len(self.heap)

    def __contains__(self, v):
        return v in self.pos

    def top(self):
        return self.heap[0][2]

    def top_key(self):
        if not self.heap:
            return (INF, INF)
        e = self.heap[0]
        return (e[0], e[1])

    def key(self, v):
        e = self.heap[self.pos[v]]
        return (e[0], e[1])

    def push(self, v, key):
        if v in self.pos:
            raise ValueError(f"node {v} already queued")
        entry = (key[0], key[1], v)
        self.heap.append(entry)
        self.pos[v] = len(self.heap) - 1
        self._up(len(self.heap) - 1)

    def pop(self):
        v = self.heap[0][2]
        self.remove(v)
        return v

    def remove(self, v) -> bool:
        i = self.pos.pop(v, None)
        if i is None:
            return False
        last = self.heap.pop()
        if i < len(self.heap):
            self.heap[i] = last
            self.pos[last[2]] = i
            self._up(i)
            self._down(self.pos[last[2]])
        return True

    def update(self, v, key):
        self.remove(v)
        self.push(v, key)

    def _up(self, i):
        h, pos = self.heap, self.pos
        e = h[i]
        while i > 0:
            p = (i - 1) >> 1
            if h[p] <= e:
                break
            h[i] = h[p]
            pos[h[i][2]] = i
            i = p
        h[i] = e
        pos[e[2]] = i

    def _down(self, i):
        h, pos = self.heap, self.pos
        n = len(h)
        e = h[i]
        while True:
            c = 2 * i + 1
            if c >= n:
                break
            if c + 1 < n and h[c + 1] < h[c]:
                c += 1
            if e <= h[c]:
                break
            h[i] = h[c]
            pos[h[i][2]] = i
            i = c
        h[i] = e
        pos[e[2]] = i

    def check(self):
        for i, e in enumerate(self.heap):
            assert self.pos[e[2]] == i
            if i:
                assert self.heap[(i - 1) >> 1] <= e
        assert len(self.pos) == len(self.heap)


class SearchTree:
    """Per-node ``g``, ``lmc`` and parent plus the priority queue and key offset."""

    def __init__(self, graph, heuristic_scale: float = 1.0):
        self.graph = graph
        self.scale = float(heuristic_scale)
        self.g: dict = {}
        self.lmc: dict = {}
        self.parent: dict = {}
        self.queue = PriorityQueue()
        self.k_m = 0.0
        self.robot = None
        self.g[graph.goal] = 0.0
        self.lmc[graph.goal] = 0.0
        self.parent[graph.goal] = None
        self.popped = 0

    # heuristic and keys

    def set_robot(self, q):
        """Move the heuristic focus to ``q``, accumulating the key offset."""
        q = (float(q[0]), float(q[1]))
        if self.robot is not None:
            self.k_m += self.scale * math.hypot(q[0] - self.robot[0], q[1] - self.robot[1])
        self.robot = q

    def h(self, v) -> float:
        if self.robot is None:
            return 0.0
        a = self.graph.anchor(v)
        return self.scale * math.hypot(a[0] - self.robot[0], a[1] - self.robot[1])

    def compute_key(self, v):
        m = min(self.g.get(v, INF), self.lmc.get(v, INF))
        return (m + self.h(v) + self.k_m, m)

    # local updates

    def compute_lmc(self, v) -> float:
        return self._best(v)[0]

    def find_parent(self, v):
        return self._best(v)[1]

    def _best(self, v):
        if v == self.graph.goal:
            return 0.0, None
        best, arg = INF, None
        g = self.g
        for w, c in self.graph.out_edges(v):
            val = c + g.get(w, INF)
            if val < best or (val == best and arg is not None and w < arg):
                best, arg = val, w
        return best, (arg if best < INF else None)

    def update_vertex(self, v):
        lmc, parent = self._best(v)
        self.lmc[v] = lmc
        self.parent[v] = parent
        self.queue.remove(v)
        if self.g.get(v, INF) != lmc:
            self.queue.push(v, self.compute_key(v))

    def is_consistent(self, v) -> bool:
        return self.g.get(v, INF) == self.lmc.get(v, INF)

    # repair

    def _start_key(self, starts):
        return min((self.compute_key(s) for s in starts), default=None)

    def compute_shortest_path_tree(self, starts: Iterable = ()):
        """Pop inconsistent nodes until every start candidate is settled.

        Runs through key ties with the start so every node keyed at or below it
        ends consistent.  With no candidates the queue is drained.
        """
        starts = list(starts)
        q = self.queue
        g, lmc = self.g, self.lmc
        while len(q):
            if starts:
                k_start = self._start_key(starts)
                if not (q.top_key() <= k_start or any(g.get(s, INF) != lmc.get(s, INF) for s in starts)):
                    break
            v = q.top()
            k_old = q.top_key()
            k_new = self.compute_key(v)
            self.popped += 1
            if k_old < k_new:
                q.update(v, k_new)
            elif g.get(v, INF) > lmc.get(v, INF):
                g[v] = lmc[v]
                q.remove(v)
                for u, _ in self.graph.in_edges(v):
                    self.update_vertex(u)
            else:
                g[v] = INF
                self.update_vertex(v)
                for u, _ in self.graph.in_edges(v):
                    self.update_vertex(u)

    def on_edge_change(self, tail):
        """Hook for cost mutations of an out-edge of ``tail``."""
        self.update_vertex(tail)

    def path_nodes(self, v, limit: Optional[int] = None) -> Optional[list]:
        """Follow parent pointers from ``v`` to the goal; ``None`` if the chain breaks."""
        if self.g.get(v, INF) == INF:
            return None
        limit = limit if limit is not None else len(self.g) + 1
        out = [v]
        while v != self.graph.goal:
            v = self.parent.get(v)
            if v is None or len(out) > limit:
                return None
            out.append(v)
        return out


def dijkstra_to_goal(graph, nodes: Iterable) -> dict:
    """From-scratch cost-to-goal for every node in ``nodes`` (reverse Dijkstra)."""
    dist = {v: INF for v in nodes}
    dist[graph.goal] = 0.0
    heap = [(0.0, graph.goal)]
    done = set()
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        for u, c in graph.in_edges(v):
            nd = d + c
            if nd < dist.get(u, INF):
                dist[u] = nd
                heapq.heappush(heap, (nd, u))
    return dist


class Digraph:
    """Minimal weighted digraph implementing the search protocol."""

    def __init__(self, anchors: dict, goal):
        self.anchors = dict(anchors)
        self.goal = goal
        self.succ = {v: {} for v in self.anchors}
        self.pred = {v: {} for v in self.anchors}

    def add_edge(self, u, v, cost: float):
        self.succ[u][v] = float(cost)
        self.pred[v][u] = float(cost)

    def set_cost(self, u, v, cost: float):
        self.add_edge(u, v, cost)

    def cost(self, u, v) -> float:
        return self.succ[u][v]

    def out_edges(self, v):
        return self.succ[v].items()

    def in_edges(self, v):
        return self.pred[v].items()

    def anchor(self, v):
        return self.anchors[v]

    def nodes(self):
        return list(self.anchors)
