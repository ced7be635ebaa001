"""Deterministic SVG frames of a run: world, sensor disc, funnels and trajectory."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .funnel import FunnelEdge, FunnelLibrary
from .geometry import Circle
from .world import Scenario

SCALE = 10.0
MARGIN = 10.0


def read_trace(path) -> dict:
    """Split a trace file into header, tick records and result."""
    header, ticks, result = None, [], None
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        kind = rec.get("type")
        if kind == "header":
            header = rec
        elif kind == "tick":
            ticks.append(rec)
        elif kind == "result":
            result = rec
    if header is None:
        raise ValueError("trace has no header record")
    return {"header": header, "ticks": ticks, "result": result}


def frame_ticks(last_tick: int, every_k: int) -> list:
    if every_k < 1:
        raise ValueError("every_k must be positive")
    ticks = list(range(0, last_tick + 1, every_k))
    if ticks[-1] != last_tick:
        ticks.append(last_tick)
    return ticks


class _Canvas:
    def __init__(self, bounds):
        self.x0, self.y0, self.x1, self.y1 = bounds
        self.w = (self.x1 - self.x0) * SCALE + 2 * MARGIN
        self.h = (self.y1 - self.y0) * SCALE + 2 * MARGIN
        self.parts = []

    def px(self, q):
        return (MARGIN + (q[0] - self.x0) * SCALE, MARGIN + (self.y1 - q[1]) * SCALE)

    def add(self, s):
        self.parts.append(s)

    def circle(self, c, r, style):
        x, y = self.px(c)
        self.add(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r * SCALE:.2f}" {style}/>')

    def rect(self, lo, hi, style):
        x, y = self.px((lo[0], hi[1]))
        self.add(f'<rect x="{x:.2f}" y="{y:.2f}" width="{(hi[0] - lo[0]) * SCALE:.2f}" height="{(hi[1] - lo[1]) * SCALE:.2f}" {style}/>')

    def ellipse(self, c, M, style):
        lam, V = np.linalg.eigh(M)
        rx, ry = 1 / math.sqrt(lam[0]), 1 / math.sqrt(lam[1])
        ang = -math.degrees(math.atan2(V[1, 0], V[0, 0]))
        x, y = self.px(c)
        self.add(
            f'<ellipse cx="{x:.2f}" cy="{y:.2f}" rx="{rx * SCALE:.2f}" ry="{ry * SCALE:.2f}" '
            f'transform="rotate({ang:.2f} {x:.2f} {y:.2f})" {style}/>'
        )

    def polyline(self, pts, style):
        if len(pts) < 2:
            return
        s = " ".join(f"{x:.2f},{y:.2f}" for x, y in (self.px(p) for p in pts))
        self.add(f'<polyline points="{s}" fill="none" {style}/>')

    def svg(self) -> str:
        head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w:.0f}" height="{self.h:.0f}">'
        return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>'] + self.parts + ["</svg>"]) + "\n"


def _edges_from_snapshot(snapshot: Optional[dict], lib: Optional[FunnelLibrary]) -> dict:
    if not snapshot or lib is None:
        return {}
    ids = lib.index.ids
    out = {}
    for e in snapshot["motion_edges"]:
        out[e["id"]] = FunnelEdge(lib, ids.index(e["library_id"]), e["shift"], e["truncate_from_knot"])
    return out


def render_trace(trace: dict, scenario: Scenario, every_k: int = 10, snapshot: Optional[dict] = None, lib: Optional[FunnelLibrary] = None) -> list:
    """List of ``(frame_tick, svg_text)``; an empty trace gives one world-only frame."""
    if trace["header"].get("run_id") != scenario.run_id:
        raise ValueError(f"trace run id {trace['header'].get('run_id')!r} does not match world {scenario.run_id!r}")
    ticks = trace["ticks"]
    edges = _edges_from_snapshot(snapshot, lib)
    last = ticks[-1]["tick"] if ticks else 0
    frames = []
    for ft in frame_ticks(last, every_k) if ticks else [0]:
        cv = _Canvas(scenario.bounds)
        cv.rect(scenario.bounds[:2], scenario.bounds[2:], 'fill="none" stroke="black" stroke-width="1"')
        for F in edges.values():
            cv.polyline([tuple(c) for c in F.centers], 'stroke="#dddddd" stroke-width="0.6"')
        closed = set(scenario.closed_windows)
        for o in scenario.obstacles + [w for w in scenario.windows if w.id in closed]:
            if isinstance(o, Circle):
                cv.circle(o.center, o.radius, 'fill="#555555"')
            else:
                cv.rect(o.lo, o.hi, 'fill="#555555"')
        for w in scenario.windows:
            if w.id not in closed:
                cv.rect(w.lo, w.hi, 'fill="none" stroke="#555555" stroke-dasharray="3,3"')
        upto = [r for r in ticks if r["tick"] <= ft]
        seen = []
        for r in upto:
            if r["funnel"] is not None and r["funnel"] not in seen:
                seen.append(r["funnel"])
        current = upto[-1]["funnel"] if upto else None
        for eid in seen:
            F = edges.get(eid)
            if F is None:
                continue
            style = 'fill="none" stroke="#1f5fbf" stroke-width="1.2"' if eid == current else 'fill="none" stroke="#444444" stroke-width="0.8"'
            for j in range(0, F.n_knots, 3):
                cv.ellipse(F.centers[j], F.knot_shape(j), style)
        traj = [tuple(scenario.q_start)] + [(r["state"][0], r["state"][1]) for r in upto]
        cv.polyline(traj, 'stroke="#d62728" stroke-width="1.5"')
        robot = traj[-1]
        cv.circle(robot, scenario.sensor_radius, 'fill="none" stroke="#2ca02c" stroke-dasharray="6,4"')
        cv.circle(robot, 0.4, 'fill="#d62728"')
        cv.circle(scenario.q_start, 0.5, 'fill="none" stroke="black"')
        cv.circle(scenario.goal_center, scenario.goal_radius, 'fill="#2ca02c"')
        frames.append((ft, cv.svg()))
    return frames


def write_frames(frames, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for tick, svg in frames:
        p = out / f"frame_{tick:06d}.svg"
        p.write_text(svg)
        paths.append(p)
    return paths
