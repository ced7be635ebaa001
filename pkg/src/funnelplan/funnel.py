"""Funnel data model, library storage and the funnel-edge operators.

A library funnel is a certified tube around a rest-to-rest nominal that ends
near the origin.  Planning uses *funnel-edges*: library funnels shifted along
the cyclic (position) coordinates and optionally truncated from the inlet side.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .config import TOL
from .errors import InvalidState
from .geometry import (
    Ellipsoid,
    Obstacle,
    contains_ellipsoid,
    contains_point,
    ellipse_circle_overlap,
    ellipse_rectangle_overlap,
    Circle,
    project,
    selection_matrix,
    van_der_corput_order,
)

FORMAT_VERSION = 1


@dataclass(eq=False)
class LyapunovCertificate:
    """Per-knot quadratic certificate ``V = e^T P e`` with level ``rho``."""

    P: np.ndarray  # (K, n, n)
    rho: np.ndarray  # (K,)
    n_samples: int = 0
    worst_margin: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "P": self.P.reshape(len(self.P), -1).tolist(),
            "rho": self.rho.tolist(),
            "n_samples": self.n_samples,
            "worst_margin": self.worst_margin,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LyapunovCertificate":
        P = np.asarray(d["P"], dtype=float)
        n = int(round(math.sqrt(P.shape[1])))
        return cls(P.reshape(-1, n, n), np.asarray(d["rho"], float), int(d["n_samples"]), float(d["worst_margin"]))


@dataclass(eq=False)
class Funnel:
    id: str
    knot_times: np.ndarray
    nominal_states: np.ndarray
    nominal_inputs: np.ndarray
    ellipsoids: list
    cyclic_idx: tuple
    noncyclic_idx: tuple
    certificate: Optional[LyapunovCertificate] = None

    def __post_init__(self):
        self.knot_times = np.asarray(self.knot_times, dtype=float)
        self.nominal_states = np.asarray(self.nominal_states, dtype=float)
        self.nominal_inputs = np.asarray(self.nominal_inputs, dtype=float)
        self.cyclic_idx = tuple(int(i) for i in self.cyclic_idx)
        self.noncyclic_idx = tuple(int(i) for i in self.noncyclic_idx)
        k = len(self.knot_times)
        if not (len(self.nominal_states) == len(self.nominal_inputs) == len(self.ellipsoids) == k):
            raise ValueError("per-knot lists have inconsistent lengths")
        if k > 1 and np.any(np.diff(self.knot_times) <= 0):
            raise ValueError("knot times must be strictly increasing")
        n = self.nominal_states.shape[1]
        if sorted(self.cyclic_idx + self.noncyclic_idx) != list(range(n)):
            raise ValueError("cyclic and non-cyclic indices must partition the state")

    @property
    def n_knots(self) -> int:
        return len(self.knot_times)

    @property
    def state_dim(self) -> int:
        return self.nominal_states.shape[1]

    @property
    def configs(self) -> np.ndarray:
        return self.nominal_states[:, self.cyclic_idx]

    @cached_property
    def cost(self) -> float:
        return funnel_cost(self)

    def check_invariants(self):
        for x, E in zip(self.nominal_states, self.ellipsoids):
            if not contains_point(E, x):
                raise ValueError(f"funnel {self.id}: nominal state outside its knot ellipsoid")

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "knot_times": self.knot_times.tolist(),
            "nominal_states": self.nominal_states.tolist(),
            "nominal_inputs": self.nominal_inputs.tolist(),
            "ellipsoids": [E.to_dict() for E in self.ellipsoids],
            "cyclic_idx": list(self.cyclic_idx),
            "noncyclic_idx": list(self.noncyclic_idx),
        }
        if self.certificate is not None:
            d["certificate"] = self.certificate.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Funnel":
        cert = d.get("certificate")
        return cls(
            d["id"],
            d["knot_times"],
            d["nominal_states"],
            d["nominal_inputs"],
            [Ellipsoid.from_dict(e) for e in d["ellipsoids"]],
            d["cyclic_idx"],
            d["noncyclic_idx"],
            LyapunovCertificate.from_dict(cert) if cert else None,
        )


def funnel_cost(F: Funnel) -> float:
    """Polyline length of the configuration-space nominal."""
    q = F.configs
    if len(q) < 2:
        raise ValueError("cost needs at least two knots")
    return float(np.sum(np.linalg.norm(np.diff(q, axis=0), axis=1)))


def shift_funnel(F: Funnel, delta) -> Funnel:
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if delta.size != len(F.cyclic_idx):
        raise ValueError(f"shift has dimension {delta.size}, funnel has {len(F.cyclic_idx)} cyclic coordinates")
    lift = np.zeros(F.state_dim)
    lift[list(F.cyclic_idx)] = delta
    states = F.nominal_states + lift
    states[:, list(F.noncyclic_idx)] = F.nominal_states[:, list(F.noncyclic_idx)]
    return Funnel(
        F.id,
        F.knot_times.copy(),
        states,
        F.nominal_inputs.copy(),
        [Ellipsoid(E.center + lift, E.shape) for E in F.ellipsoids],
        F.cyclic_idx,
        F.noncyclic_idx,
        F.certificate,
    )


def truncate_funnel(F: Funnel, k: int) -> Funnel:
    """Keep knots ``k..end``; a suffix of an invariant tube is invariant to the same terminal set."""
    if not 0 <= k < F.n_knots - 1:
        raise ValueError(f"truncation knot {k} out of range for {F.n_knots} knots")
    cert = F.certificate
    if cert is not None:
        cert = LyapunovCertificate(cert.P[k:], cert.rho[k:], cert.n_samples, cert.worst_margin)
    return Funnel(
        F.id,
        F.knot_times[k:],
        F.nominal_states[k:],
        F.nominal_inputs[k:],
        list(F.ellipsoids[k:]),
        F.cyclic_idx,
        F.noncyclic_idx,
        cert,
    )


@dataclass(eq=False)
class FunnelLibrary:
    funnels: dict
    epsilon: float
    goal_ball_radius: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.funnels:
            return
        ref = next(iter(self.funnels.values()))
        for F in self.funnels.values():
            if F.state_dim != ref.state_dim or F.cyclic_idx != ref.cyclic_idx:
                raise ValueError("library funnels must share state dimension and cyclic split")

    def __len__(self) -> int:
        return len(self.funnels)

    def ids(self) -> list:
        return sorted(self.funnels)

    def check_invariants(self):
        goal = Ellipsoid(np.zeros(2), np.eye(2) / self.goal_ball_radius**2)
        for F in self.funnels.values():
            F.check_invariants()
            B = selection_matrix(F.state_dim, F.cyclic_idx)
            if not contains_ellipsoid(goal, project(F.ellipsoids[-1], B)):
                raise ValueError(f"funnel {F.id}: terminal ellipse leaves the goal ball")

    @cached_property
    def index(self) -> "LibraryIndex":
        return LibraryIndex(self)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "epsilon": self.epsilon,
            "goal_ball_radius": self.goal_ball_radius,
            "metadata": self.metadata,
            "funnels": [self.funnels[k].to_dict() for k in self.ids()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FunnelLibrary":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported library format_version {d.get('format_version')!r}")
        funnels = {f["id"]: Funnel.from_dict(f) for f in d["funnels"]}
        return cls(funnels, float(d["epsilon"]), float(d["goal_ball_radius"]), d.get("metadata", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "FunnelLibrary":
        return cls.from_dict(json.loads(Path(path).read_text()))


def libraries_equal(a: FunnelLibrary, b: FunnelLibrary, atol: float = 1e-12) -> bool:
    """Field-wise comparison with an absolute float tolerance."""

    def close(x, y):
        if isinstance(x, dict) and isinstance(y, dict):
            return x.keys() == y.keys() and all(close(x[k], y[k]) for k in x)
        if isinstance(x, (list, tuple)) and isinstance(y, (list, tuple)):
            return len(x) == len(y) and all(close(u, v) for u, v in zip(x, y))
        if isinstance(x, float) or isinstance(y, float):
            if math.isnan(x) and math.isnan(y):
                return True
            return abs(x - y) <= atol
        return x == y

    return close(a.to_dict(), b.to_dict())


class LibraryIndex:
    """Per-funnel, per-knot quantities reused by every funnel-edge."""

    def __init__(self, lib: FunnelLibrary):
        if len(lib) == 0:
            raise InvalidState("funnel library is empty")
        self.lib = lib
        self.ids = lib.ids()
        ref = lib.funnels[self.ids[0]]
        self.state_dim = ref.state_dim
        self.cyclic_idx = ref.cyclic_idx
        self.noncyclic_idx = ref.noncyclic_idx
        self.Bc = selection_matrix(self.state_dim, self.cyclic_idx)
        self.Bnc = selection_matrix(self.state_dim, self.noncyclic_idx)
        self.entries = []
        for fid in self.ids:
            F = lib.funnels[fid]
            q = F.configs
            seg = np.linalg.norm(np.diff(q, axis=0), axis=1)
            remaining = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
            shadows = [project(E, self.Bc) for E in F.ellipsoids]
            disp = q[0] - q[-1]
            self.entries.append(
                {
                    "funnel": F,
                    "configs": q,
                    "remaining": remaining,
                    "cfg_shapes": np.array([S.shape for S in shadows]),
                    "cfg_radius": np.array([S.max_semi_axis for S in shadows]),
                    "cfg_rmin": np.array([float(np.min(S.semi_axes)) for S in shadows]),
                    "bearing": math.atan2(disp[1], disp[0]),
                    "state_shapes": np.array([E.shape for E in F.ellipsoids]),
                }
            )
        self.angular_tolerance = math.pi / len(self.ids)
        self.bearings = np.array([e["bearing"] for e in self.entries])

    def entry(self, lib_pos: int) -> dict:
        return self.entries[lib_pos]

    @lru_cache(maxsize=None)
    def nc_ellipsoid(self, lib_pos: int, knot: int) -> Ellipsoid:
        F = self.entries[lib_pos]["funnel"]
        return project(F.ellipsoids[knot], self.Bnc)

    @lru_cache(maxsize=None)
    def compossible(self, out_pos: int, in_pos: int, in_knot: int) -> bool:
        """Outlet of library funnel ``out_pos`` vs inlet of ``in_pos`` truncated at ``in_knot``."""
        out_F = self.entries[out_pos]["funnel"]
        return contains_ellipsoid(self.nc_ellipsoid(in_pos, in_knot), self.nc_ellipsoid(out_pos, out_F.n_knots - 1))


class FunnelEdge:
    """A library funnel shifted along the cyclic coordinates and truncated from the inlet side."""

    __slots__ = (
        "lib",
        "lib_pos",
        "library_id",
        "cyclic_shift",
        "time_shift",
        "truncate_from_knot",
        "q_from",
        "q_to",
        "cost",
        "centers",
        "radii",
        "radii_min",
        "bound_center",
        "bound_radius",
        "id",
        "_inlet",
        "_outlet",
    )

    def __init__(self, lib: FunnelLibrary, lib_pos: int, shift, k: int, q_from=None, q_to=None):
        idx = lib.index
        ent = idx.entry(lib_pos)
        F = ent["funnel"]
        if not 0 <= k < F.n_knots - 1:
            raise ValueError(f"truncation knot {k} out of range")
        self.lib = lib
        self.lib_pos = lib_pos
        self.library_id = F.id
        self.cyclic_shift = np.asarray(shift, dtype=float).reshape(len(idx.cyclic_idx))
        self.truncate_from_knot = int(k)
        self.time_shift = -float(F.knot_times[k])
        self.centers = ent["configs"][k:] + self.cyclic_shift
        self.radii = ent["cfg_radius"][k:]
        self.radii_min = ent["cfg_rmin"][k:]
        self.cost = float(ent["remaining"][k])
        self.q_from = self.centers[0].copy() if q_from is None else np.asarray(q_from, dtype=float)
        self.q_to = self.centers[-1].copy() if q_to is None else np.asarray(q_to, dtype=float)
        lo = np.min(self.centers - self.radii[:, None], axis=0)
        hi = np.max(self.centers + self.radii[:, None], axis=0)
        self.bound_center = 0.5 * (lo + hi)
        self.bound_radius = float(np.max(np.linalg.norm(self.centers - self.bound_center, axis=1) + self.radii))
        self.id = None
        self._inlet = None
        self._outlet = None

    @property
    def n_knots(self) -> int:
        return len(self.centers)

    @property
    def library_funnel(self) -> Funnel:
        return self.lib.index.entry(self.lib_pos)["funnel"]

    @property
    def funnel(self) -> Funnel:
        """The materialised shifted and truncated funnel."""
        F = shift_funnel(self.library_funnel, self.cyclic_shift)
        return truncate_funnel(F, self.truncate_from_knot) if self.truncate_from_knot else F

    def knot_shape(self, j: int) -> np.ndarray:
        """Configuration-space shape matrix of retained knot ``j``."""
        return self.lib.index.entry(self.lib_pos)["cfg_shapes"][self.truncate_from_knot + j]

    @property
    def inlet(self) -> Ellipsoid:
        if self._inlet is None:
            self._inlet = Ellipsoid(self.centers[0], self.knot_shape(0))
        return self._inlet

    @property
    def outlet(self) -> Ellipsoid:
        if self._outlet is None:
            self._outlet = Ellipsoid(self.centers[-1], self.knot_shape(self.n_knots - 1))
        return self._outlet

    def workspace_ellipse(self, j: int) -> Ellipsoid:
        return Ellipsoid(self.centers[j], self.knot_shape(j))

    def nominal_state(self, j: int) -> np.ndarray:
        ent = self.lib.index.entry(self.lib_pos)
        x = ent["funnel"].nominal_states[self.truncate_from_knot + j].copy()
        x[list(self.lib.index.cyclic_idx)] += self.cyclic_shift
        return x

    def nominal_input(self, j: int) -> np.ndarray:
        return self.library_funnel.nominal_inputs[self.truncate_from_knot + j]

    def state_shape(self, j: int) -> np.ndarray:
        return self.lib.index.entry(self.lib_pos)["state_shapes"][self.truncate_from_knot + j]

    def state_value(self, x, j: int = 0) -> float:
        """Normalised Lyapunov value ``V/rho`` of state ``x`` at retained knot ``j``."""
        d = np.asarray(x, dtype=float) - self.nominal_state(j)
        return float(d @ self.state_shape(j) @ d)

    def rest_state(self, q) -> np.ndarray:
        x = np.zeros(self.lib.index.state_dim)
        x[list(self.lib.index.cyclic_idx)] = q
        return x

    def inlet_contains(self, q) -> bool:
        d = np.asarray(q, dtype=float) - self.centers[0]
        return float(d @ self.knot_shape(0) @ d) <= 1.0 + TOL.membership

    def __repr__(self):
        return (
            f"FunnelEdge(id={self.id}, lib={self.library_id}, k={self.truncate_from_knot}, "
            f"from={np.round(self.q_from, 3).tolist()}, to={np.round(self.q_to, 3).tolist()}, cost={self.cost:.3f})"
        )


def compossible(F1: FunnelEdge, F2: FunnelEdge) -> bool:
    """Outlet of ``F1`` inside the inlet of ``F2`` on the non-cyclic subspace."""
    if F1.lib is F2.lib:
        return F1.lib.index.compossible(F1.lib_pos, F2.lib_pos, F2.truncate_from_knot)
    return compossible_exact(F1, F2)


def compossible_exact(F1: FunnelEdge, F2: FunnelEdge) -> bool:
    a, b = F1.funnel, F2.funnel
    if a.state_dim != b.state_dim or a.noncyclic_idx != b.noncyclic_idx:
        raise ValueError("funnels differ in state dimension or cyclic split")
    Bnc = selection_matrix(a.state_dim, a.noncyclic_idx)
    return contains_ellipsoid(project(b.ellipsoids[0], Bnc), project(a.ellipsoids[-1], Bnc))


def _select_funnel(lib: FunnelLibrary, q_from, q_to):
    """``(lib_pos, shift, k)`` of the best candidate, or ``None``; no membership test."""
    idx = lib.index
    disp = q_from - q_to
    dist = math.hypot(disp[0], disp[1])
    if dist == 0.0:
        return None
    bearing = math.atan2(disp[1], disp[0])
    diff = np.abs((idx.bearings - bearing + math.pi) % (2 * math.pi) - math.pi)
    best = None
    for pos in np.nonzero(diff <= idx.angular_tolerance + 1e-12)[0].tolist():
        ent = idx.entries[pos]
        remaining = ent["remaining"]
        # remaining arc length is decreasing; largest k with remaining[k] >= dist, k < last
        k = int(np.searchsorted(-remaining[:-1], -dist, side="right")) - 1
        k = max(k, 0)
        shift = q_to - ent["configs"][-1]
        c = ent["configs"][k] + shift
        key = (math.hypot(c[0] - q_from[0], c[1] - q_from[1]), idx.ids[pos])
        if best is None or key < best[0]:
            best = (key, pos, shift, k, c)
    return None if best is None else best[1:]


def find_funnel(lib: FunnelLibrary, q_from, q_to) -> Optional[FunnelEdge]:
    """Pick, shift and truncate the library funnel that best drives ``q_from`` to ``q_to``.

    Candidates are funnels whose nominal displacement bearing is within half the
    bearing spacing of ``q_from - q_to``.  The outlet is centred on ``q_to``; the
    inlet is the last knot whose remaining arc length still covers the distance.
    """
    if len(lib) == 0:
        raise InvalidState("funnel library is empty")
    q_from = np.asarray(q_from, dtype=float)
    q_to = np.asarray(q_to, dtype=float)
    sel = _select_funnel(lib, q_from, q_to)
    if sel is None:
        return None
    pos, shift, k, c = sel
    d = q_from - c
    if float(d @ lib.index.entries[pos]["cfg_shapes"][k] @ d) > 1.0 + TOL.membership:
        return None
    return FunnelEdge(lib, pos, shift, k, q_from, q_to)


def edge_collides(edge: FunnelEdge, obstacles: Iterable[Obstacle]) -> bool:
    """Bounding-volume pass, then exact knot-ellipse tests in Van der Corput order."""
    order = None
    for obs in obstacles:
        oc, orad = obs.bounding_circle
        if np.hypot(*(edge.bound_center - oc)) > edge.bound_radius + orad:
            continue
        if isinstance(obs, Circle):
            dist = np.hypot(edge.centers[:, 0] - oc[0], edge.centers[:, 1] - oc[1]) - orad
        else:
            gap = np.maximum(np.maximum(obs.lo - edge.centers, edge.centers - obs.hi), 0.0)
            dist = np.hypot(gap[:, 0], gap[:, 1])
        # inscribed circle hit is certain, circumscribed miss is certain
        if np.any(dist <= edge.radii_min):
            return True
        near = dist <= edge.radii
        if not near.any():
            continue
        if order is None:
            order = van_der_corput_order(edge.n_knots)
        for j in order:
            if not near[j]:
                continue
            if isinstance(obs, Circle):
                hit = ellipse_circle_overlap(edge.centers[j], edge.knot_shape(j), obs.center, obs.radius)
            else:
                hit = ellipse_rectangle_overlap(edge.centers[j], edge.knot_shape(j), obs.lo, obs.hi)
            if hit:
                return True
    return False


def steer(q1, q2, lib: FunnelLibrary, obstacles, rest_level: Optional[float] = None) -> Optional[FunnelEdge]:
    """Funnel-edge from ``q1`` to ``q2`` or ``None``.

    ``obstacles`` is any iterable of obstacles or an object with a ``near(center, radius)``
    method.  With ``rest_level`` set, the robot at rest at ``q1`` must also lie in
    the state-space inlet at that normalised level.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    sel = _select_funnel(lib, q1, q2)
    if sel is None:
        return None
    pos, shift, k, c = sel
    ent = lib.index.entries[pos]
    d = q1 - c
    if float(d @ ent["cfg_shapes"][k] @ d) > 1.0 + TOL.membership:
        return None
    if rest_level is not None:
        F = ent["funnel"]
        x = np.zeros(F.state_dim)
        x[list(lib.index.cyclic_idx)] = q1 - shift
        e = x - F.nominal_states[k]
        if float(e @ ent["state_shapes"][k] @ e) > rest_level:
            return None
    edge = FunnelEdge(lib, pos, shift, k, q1, q2)
    near = obstacles.near(edge.bound_center, edge.bound_radius) if hasattr(obstacles, "near") else obstacles
    if edge_collides(edge, near):
        return None
    return edge


class InletIndex:
    """Uniform-grid index over funnel-edge inlets, keyed by bounding radius."""

    def __init__(self, cell: float = 2.0):
        self.cell = float(cell)
        self.grid: dict = {}
        self.members: dict = {}

    def _cells(self, c, r):
        i0, j0 = math.floor((c[0] - r) / self.cell), math.floor((c[1] - r) / self.cell)
        i1, j1 = math.floor((c[0] + r) / self.cell), math.floor((c[1] + r) / self.cell)
        return [(i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members.values())

    def add(self, edge: FunnelEdge):
        key = id(edge)
        if key in self.members:
            return
        self.members[key] = edge
        for cell in self._cells(edge.centers[0], edge.radii[0]):
            self.grid.setdefault(cell, {})[key] = edge

    def remove(self, edge: FunnelEdge):
        key = id(edge)
        if self.members.pop(key, None) is None:
            return
        for cell in self._cells(edge.centers[0], edge.radii[0]):
            bucket = self.grid.get(cell)
            if bucket is not None:
                bucket.pop(key, None)
                if not bucket:
                    del self.grid[cell]

    def candidates(self, q) -> list:
        bucket = self.grid.get((math.floor(q[0] / self.cell), math.floor(q[1] / self.cell)))
        return list(bucket.values()) if bucket else []

    def containing(self, q) -> list:
        q = np.asarray(q, dtype=float)
        return [e for e in self.candidates(q) if e.inlet_contains(q)]


def in_funnel(q, funnel_set) -> bool:
    """True iff ``q`` lies in the configuration-space inlet of some funnel-edge."""
    q = np.asarray(q, dtype=float)
    if isinstance(funnel_set, InletIndex):
        return any(e.inlet_contains(q) for e in funnel_set.candidates(q))
    return any(e.inlet_contains(q) for e in funnel_set)
