"""Spatial indices used by the roadmap and the world model."""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree


class PointIndex:
    """Planar points in a kd-tree that is rebuilt lazily, plus a brute-force buffer of recent inserts."""

    def __init__(self, rebuild_threshold: int = 128):
        self.points: list = []
        self.rebuild_threshold = rebuild_threshold
        self._tree = None
        self._tree_size = 0

    def __len__(self):
        return len(self.points)

    def add(self, q) -> int:
        self.points.append((float(q[0]), float(q[1])))
        if len(self.points) - self._tree_size > max(self.rebuild_threshold, self._tree_size // 4):
            self._rebuild()
        return len(self.points) - 1

    def _rebuild(self):
        self._tree = cKDTree(np.array(self.points)) if self.points else None
        self._tree_size = len(self.points)

    def _buffer(self):
        return range(self._tree_size, len(self.points))

    def within(self, q, r: float) -> list:
        """Indices of all points with distance ``<= r`` from ``q``, sorted."""
        if r < 0:
            raise ValueError("radius must be non-negative")
        out = []
        if self._tree is not None:
            out.extend(self._tree.query_ball_point((q[0], q[1]), r))
        qx, qy = float(q[0]), float(q[1])
        for i in self._buffer():
            p = self.points[i]
            if math.hypot(p[0] - qx, p[1] - qy) <= r:
                out.append(i)
        # the tree uses a squared-distance test; make the boundary rule match the scan
        out = [i for i in out if math.hypot(self.points[i][0] - qx, self.points[i][1] - qy) <= r]
        return sorted(out)

    def nearest(self, q):
        """``(index, distance)`` of the nearest point, lowest index on ties; ``(None, inf)`` when empty."""
        best = (math.inf, None)
        qx, qy = float(q[0]), float(q[1])
        if self._tree is not None:
            d, _ = self._tree.query((qx, qy))
            if math.isfinite(d):
                for j in self._tree.query_ball_point((qx, qy), d * (1 + 1e-12) + 1e-15):
                    dj = math.hypot(self.points[j][0] - qx, self.points[j][1] - qy)
                    if (dj, j) < best:
                        best = (dj, j)
        for i in self._buffer():
            p = self.points[i]
            d = math.hypot(p[0] - qx, p[1] - qy)
            if (d, i) < best:
                best = (d, i)
        return best[1], best[0]


class CircleGrid:
    """Uniform grid of items keyed by a bounding circle; supports removal."""

    def __init__(self, cell: float = 5.0):
        self.cell = float(cell)
        self.grid: dict = {}
        self.items: dict = {}

    def _cells(self, c, r):
        cs = self.cell
        i0, i1 = math.floor((c[0] - r) / cs), math.floor((c[0] + r) / cs)
        j0, j1 = math.floor((c[1] - r) / cs), math.floor((c[1] + r) / cs)
        return [(i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]

    def __len__(self):
        return len(self.items)

    def __contains__(self, key):
        return key in self.items

    def values(self):
        return [self.items[k][0] for k in sorted(self.items)]

    def add(self, key, item, center, radius):
        if key in self.items:
            self.remove(key)
        self.items[key] = (item, (float(center[0]), float(center[1])), float(radius))
        for cell in self._cells(center, radius):
            self.grid.setdefault(cell, set()).add(key)

    def remove(self, key):
        entry = self.items.pop(key, None)
        if entry is None:
            return
        _, c, r = entry
        for cell in self._cells(c, r):
            bucket = self.grid.get(cell)
            if bucket is not None:
                bucket.discard(key)
                if not bucket:
                    del self.grid[cell]

    def near(self, center, radius) -> list:
        """Items whose bounding circle intersects the query circle, ordered by key."""
        keys = set()
        for cell in self._cells(center, radius):
            bucket = self.grid.get(cell)
            if bucket:
                keys |= bucket
        out = []
        cx, cy = float(center[0]), float(center[1])
        for k in sorted(keys):
            item, c, r = self.items[k]
            if math.hypot(c[0] - cx, c[1] - cy) <= r + radius:
                out.append(item)
        return out


class ObstacleSet(CircleGrid):
    """Obstacles keyed by id and indexed by bounding circle."""

    def add_obstacle(self, obs):
        c, r = obs.bounding_circle
        self.add(obs.id, obs, c, r)

    def remove_obstacle(self, obs_id):
        self.remove(obs_id)

    def get(self, obs_id):
        entry = self.items.get(obs_id)
        return None if entry is None else entry[0]

    def ids(self) -> set:
        return set(self.items)

    def __iter__(self):
        return iter(self.values())
