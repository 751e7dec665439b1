"""Brute-force reference implementations the tests compare against.

Deliberately naive and written independently of the package internals:
plain Dijkstra, per-cell polar binning, dense polyline sampling.
"""

import math

import numpy as np


def random_connected_graph(rng, max_nodes=12):
    """Random geometric-ish connected graph as (nodes, edges) tuples."""
    n = int(rng.integers(2, max_nodes + 1))
    nodes = [(i, float(rng.uniform(0, 30)), float(rng.uniform(0, 30))) for i in range(n)]
    edges = set()
    order = list(rng.permutation(n))
    for a, b in zip(order[:-1], order[1:]):  # random spanning tree first
        edges.add((min(a, b), max(a, b)))
    extra = int(rng.integers(0, n))
    for _ in range(extra):
        a, b = rng.integers(0, n, size=2)
        if a != b:
            edges.add((min(int(a), int(b)), max(int(a), int(b))))
    return tuple(nodes), tuple(sorted(edges))


def dijkstra_cost(nodes, edges, start, goal):
    """Textbook Dijkstra without a heap; returns the shortest path cost."""
    pos = {i: (x, y) for i, x, y in nodes}
    adj = {i: [] for i, _, _ in nodes}
    for a, b in edges:
        w = math.hypot(pos[b][0] - pos[a][0], pos[b][1] - pos[a][1])
        adj[a].append((b, w))
        adj[b].append((a, w))
    dist = {i: math.inf for i in pos}
    dist[start] = 0.0
    unvisited = set(pos)
    while unvisited:
        u = min(unvisited, key=lambda k: dist[k])
        unvisited.discard(u)
        if u == goal:
            return dist[u]
        for v, w in sorted(adj[u]):
            if dist[u] + w < dist[v]:
                dist[v] = dist[u] + w
    return dist[goal]


def naive_polar_bins(points, x, y, alpha):
    """Per-point binning by explicit range scans; returns flat 24-entry bins
    plus the per-point (sector, ring) or None."""
    o = np.zeros(24)
    assignments = []
    for px, py in points:
        r = math.hypot(px - x, py - y)
        if r <= 1.0:
            ring = 0
        elif r <= 2.5:
            ring = 1
        elif r <= 5.0:
            ring = 2
        else:
            assignments.append(None)
            continue
        ego = math.atan2(py - y, px - x) - alpha
        sector = None
        for k in range(8):
            d = math.atan2(math.sin(ego - k * math.pi / 4),
                           math.cos(ego - k * math.pi / 4))
            if -math.pi / 8 <= d < math.pi / 8:
                sector = k
                break
        assert sector is not None
        o[sector * 3 + ring] = 1.0
        assignments.append((sector, ring))
    return o, assignments


def sampled_distance_to_polyline(pos, polyline, step=0.001):
    """Distance to a polyline by dense 1 mm sampling of every segment."""
    best = math.inf
    px, py = pos
    for (xa, ya), (xb, yb) in zip(polyline[:-1], polyline[1:]):
        seg = math.hypot(xb - xa, yb - ya)
        n = max(int(seg / step), 1)
        for i in range(n + 1):
            u = i / n
            d = math.hypot(px - (xa + u * (xb - xa)), py - (ya + u * (yb - ya)))
            if d < best:
                best = d
    return best
