"""Regenerate the bundled maze layout (20 walls, 10 windows, 10 start/goal pairs).

Three vertical partitions at x = -12.5, 0, 12.5 each carry one permanent door and
two windows; every column is split at y = 0 by a wall with one window.
"""
import json
from pathlib import Path

HALF = 0.5
GAP = 5.0
OUT = Path(__file__).resolve().parents[1] / "src" / "funnelplan" / "data" / "maze.json"

VERTICAL = {
    -12.5: {"door": (4.0, 9.0), "windows": [(-21.0, -16.0), (16.0, 21.0)]},
    0.0: {"door": (-21.0, -16.0), "windows": [(-9.0, -4.0), (9.0, 14.0)]},
    12.5: {"door": (16.0, 21.0), "windows": [(-14.0, -9.0), (3.0, 8.0)]},
}
COLUMNS = [(-25.0, -13.0), (-12.0, -0.5), (0.5, 12.0), (13.0, 25.0)]
PAIRS = [
    ((-18.75, -12.5), (18.75, 12.5)),
    ((-18.75, 12.5), (18.75, -12.5)),
    ((-6.25, -12.5), (18.75, -12.5)),
    ((-18.75, -12.5), (6.25, 12.5)),
    ((-6.25, 12.5), (6.25, -12.5)),
    ((18.75, 12.5), (-18.75, 12.5)),
    ((6.25, -20.0), (-6.25, 20.0)),
    ((-20.0, 5.0), (20.0, -5.0)),
    ((-6.25, -5.0), (18.75, 5.0)),
    ((-18.75, 20.0), (6.25, -20.0)),
]


def rect(i, x0, y0, x1, y1):
    return {"kind": "rectangle", "id": i, "lo": [x0, y0], "hi": [x1, y1]}


def build():
    walls, windows = [], []
    for x, spec in VERTICAL.items():
        openings = sorted([spec["door"]] + spec["windows"])
        edges = [-25.0] + [v for o in openings for v in o] + [25.0]
        for y0, y1 in zip(edges[::2], edges[1::2]):
            walls.append((x - HALF, y0, x + HALF, y1))
        for y0, y1 in spec["windows"]:
            windows.append((x - HALF, y0, x + HALF, y1))
    for xa, xb in COLUMNS:
        c = 0.5 * (xa + xb)
        walls.append((xa, -HALF, c - GAP / 2, HALF))
        walls.append((c + GAP / 2, -HALF, xb, HALF))
        windows.append((c - GAP / 2, -HALF, c + GAP / 2, HALF))
    assert len(walls) == 20 and len(windows) == 10
    layout = {
        "format_version": 1,
        "bounds": [-25.0, -25.0, 25.0, 25.0],
        "walls": [rect(i, *w) for i, w in enumerate(walls)],
        "windows": [rect(100 + i, *w) for i, w in enumerate(windows)],
        "closed_windows_dynamic": [100 + i for i in range(0, 10, 2)],
        "pairs": [[list(s), list(g)] for s, g in PAIRS],
    }
    return layout


if __name__ == "__main__":
    OUT.write_text(json.dumps(build(), indent=1) + "\n")
    print(f"wrote {OUT}")
