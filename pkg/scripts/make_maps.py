#!/usr/bin/env python3
"""Regenerate the fixture maps under maps/.

Deterministic, no RNG: edit the layout constants and rerun.  Maps use
0.5 m cells, 4-5 m wide corridors, and hand-placed corridor graphs.
"""

import json
import pathlib

RES = 0.5

OUT = pathlib.Path(__file__).resolve().parent.parent / "maps"


def blank(width_m, height_m):
    w, h = int(width_m / RES), int(height_m / RES)
    return [[1] * w for _ in range(h)], w, h


def carve(grid, x0, y0, x1, y1):
    """Free the cells whose centers fall inside [x0,x1) x [y0,y1) meters."""
    for r, row in enumerate(grid):
        cy = (r + 0.5) * RES
        if not y0 <= cy < y1:
            continue
        for c in range(len(row)):
            cx = (c + 0.5) * RES
            if x0 <= cx < x1:
                row[c] = 0


def pocket(grid, x, y, half=3.0):
    """Widen a junction into a square pocket, the way concourse
    intersections open up; keeps the outer boundary wall intact."""
    w_m = len(grid[0]) * RES
    h_m = len(grid) * RES
    carve(grid, max(0.5, x - half), max(0.5, y - half),
          min(w_m - 0.5, x + half), min(h_m - 0.5, y + half))


def dump(name, grid, w, h, landmarks, nodes, edges):
    data = {
        "resolution": RES,
        "width": w,
        "height": h,
        "occupancy": ["".join(str(v) for v in row) for row in grid],
        "landmarks": [{"id": i, "type": t, "x": x, "y": y} for i, t, x, y in landmarks],
        "graph": {
            "nodes": [{"id": i, "x": x, "y": y} for i, x, y in nodes],
            "edges": [list(e) for e in edges],
        },
    }
    path = OUT / f"{name}.json"
    path.write_text(json.dumps(data, indent=1) + "\n")
    print(f"wrote {path}")


def l_corridor():
    # horizontal leg then a left turn into a vertical leg; no landmarks
    grid, w, h = blank(20, 20)
    carve(grid, 2, 2, 18, 6)
    carve(grid, 14, 2, 18, 18)
    pocket(grid, 16.0, 4.0)
    nodes = [(0, 4.0, 4.0), (1, 16.0, 4.0), (2, 16.0, 16.0)]
    edges = [(0, 1), (1, 2)]
    dump("l_corridor", grid, w, h, [], nodes, edges)


def t_junction():
    # stem from the south meeting an east-west corridor
    grid, w, h = blank(24, 16)
    carve(grid, 2, 10, 22, 14)
    carve(grid, 10, 2, 14, 14)
    pocket(grid, 12.0, 12.0)
    nodes = [(0, 12.0, 4.0), (1, 12.0, 12.0), (2, 4.0, 12.0), (3, 20.0, 12.0)]
    edges = [(0, 1), (1, 2), (1, 3)]
    landmarks = [("exit-sign", "door", 12.0, 13.5)]
    dump("t_junction", grid, w, h, landmarks, nodes, edges)


def office():
    # rectangular loop corridor around a central block; walkable forever
    grid, w, h = blank(30, 20)
    carve(grid, 1, 1, 29, 19)
    for r, row in enumerate(grid):       # central block back to occupied
        cy = (r + 0.5) * RES
        for c in range(len(row)):
            cx = (c + 0.5) * RES
            if 5 <= cx < 25 and 5 <= cy < 15:
                row[c] = 1
    nodes = [
        (0, 3.0, 3.0), (1, 15.0, 3.0), (2, 27.0, 3.0), (3, 27.0, 10.0),
        (4, 27.0, 17.0), (5, 15.0, 17.0), (6, 3.0, 17.0), (7, 3.0, 10.0),
    ]
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 0)]
    landmarks = [
        ("lobby-door", "door", 10.0, 1.5),
        ("east-elevator", "elevator", 28.5, 10.0),
        ("north-stairs", "stairs", 20.0, 18.5),
        ("front-desk", "info-desk", 1.5, 10.0),
    ]
    dump("office", grid, w, h, landmarks, nodes, edges)


def arcade():
    # serpentine gallery: six 10 m legs with alternating bends, no shortcuts,
    # so guided walks re-aim at every corner the way mall concourses do
    grid, w, h = blank(36, 26)
    carve(grid, 1, 1, 15, 5)        # leg 0 east
    carve(grid, 11, 1, 15, 15)      # leg 1 north
    carve(grid, 11, 11, 25, 15)     # leg 2 east
    carve(grid, 21, 11, 25, 25)     # leg 3 north
    carve(grid, 21, 21, 35, 25)     # leg 4 east
    carve(grid, 31, 11, 35, 25)     # leg 5 south
    for bx, by in ((13, 3), (13, 13), (23, 13), (23, 23), (33, 23)):
        pocket(grid, bx, by)
    nodes = [
        (0, 3.0, 3.0), (1, 13.0, 3.0), (2, 13.0, 13.0), (3, 23.0, 13.0),
        (4, 23.0, 23.0), (5, 33.0, 23.0), (6, 33.0, 13.0),
    ]
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)]
    landmarks = [
        ("entry-door", "door", 3.0, 1.5),
        ("mid-elevator", "elevator", 13.5, 14.0),
        ("court-desk", "info-desk", 23.0, 11.5),
        ("far-stairs", "stairs", 34.0, 24.0),
    ]
    dump("arcade", grid, w, h, landmarks, nodes, edges)


def atrium():
    # mall-style concourse: perimeter ring plus a central spine between two
    # shop-block islands, sized so guided walks run a minute or more
    grid, w, h = blank(56, 36)
    carve(grid, 1, 1, 55, 6)        # south concourse
    carve(grid, 1, 30, 55, 35)      # north concourse
    carve(grid, 1, 1, 6, 35)        # west corridor
    carve(grid, 50, 1, 55, 35)      # east corridor
    carve(grid, 25.5, 1, 30.5, 35)  # central spine
    nodes = [
        (0, 3.5, 3.5), (1, 28.0, 3.5), (2, 52.5, 3.5),
        (3, 52.5, 32.5), (4, 28.0, 32.5), (5, 3.5, 32.5),
        (6, 28.0, 18.0),
    ]
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 6), (6, 4)]
    landmarks = [
        ("south-info", "info-desk", 15.0, 1.5),
        ("spine-elevator", "elevator", 29.5, 18.0),
        ("east-stairs", "stairs", 53.5, 20.0),
        ("north-door", "door", 40.0, 33.5),
        ("west-door", "door", 2.5, 10.0),
    ]
    dump("atrium", grid, w, h, landmarks, nodes, edges)


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    l_corridor()
    t_junction()
    office()
    arcade()
    atrium()
