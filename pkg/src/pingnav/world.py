"""Static environment model.

Occupancy grid plus landmark list plus a hand-authored corridor graph, loaded
from a JSON map file.  Provides global shortest paths over the graph,
waypoint generation along a path, point-to-path distances, and the
ego-centered polar occupancy/landmark features that feed the dynamics models.
All structures are immutable after load and every operation is a pure
function, so plans can be shared freely across threads.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .statespace import HumanState, wrap_angle

LANDMARK_TYPES = ("door", "elevator", "stairs", "info-desk")

N_SECTORS = 8
RING_BOUNDS = (1.0, 2.5, 5.0)  # ring upper edges in meters, inclusive
N_RINGS = len(RING_BOUNDS)
N_BINS = N_SECTORS * N_RINGS
OBSTACLE_VEC_SIZE = N_BINS
LANDMARK_VEC_SIZE = N_BINS * len(LANDMARK_TYPES)

# Waypoints are dropped this far past a turn vertex or a landmark projection.
WAYPOINT_OFFSET = 3.0
# Interior path vertices count as turns above this heading change.
TURN_THRESHOLD = math.pi / 6
# Landmarks further than this from the path polyline do not spawn waypoints.
LANDMARK_CAPTURE = 2.5

ARRIVAL_RADIUS = 1.5
HEADING_TOL = math.pi / 6


class MapValidationError(ValueError):
    """Map file fails the schema or a structural invariant."""


@dataclass(frozen=True)
class Landmark:
    id: str
    type: str
    x: float
    y: float


@dataclass(frozen=True)
class NavGraph:
    """Corridor skeleton: nodes in meters, undirected Euclidean-cost edges."""

    nodes: tuple[tuple[int, float, float], ...]
    edges: tuple[tuple[int, int], ...]

    @cached_property
    def _pos(self) -> dict[int, tuple[float, float]]:
        return {nid: (x, y) for nid, x, y in self.nodes}

    @cached_property
    def _adj(self) -> dict[int, tuple[tuple[int, float], ...]]:
        adj: dict[int, list[tuple[int, float]]] = {nid: [] for nid, _, _ in self.nodes}
        for a, b in self.edges:
            c = self.edge_cost(a, b)
            adj[a].append((b, c))
            adj[b].append((a, c))
        return {nid: tuple(sorted(ns)) for nid, ns in adj.items()}

    def node_pos(self, nid: int) -> tuple[float, float]:
        try:
            return self._pos[nid]
        except KeyError:
            raise ValueError(f"unknown node id {nid}") from None

    def edge_cost(self, a: int, b: int) -> float:
        (xa, ya), (xb, yb) = self._pos[a], self._pos[b]
        return math.hypot(xb - xa, yb - ya)

    def neighbors(self, nid: int) -> tuple[tuple[int, float], ...]:
        try:
            return self._adj[nid]
        except KeyError:
            raise ValueError(f"unknown node id {nid}") from None


@dataclass(frozen=True)
class Path:
    nodes: tuple[int, ...]
    cost: float
    polyline: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    alpha_w: float
    radius: float = ARRIVAL_RADIUS
    heading_tol: float = HEADING_TOL

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("arrival radius must be positive")
        if not 0 < self.heading_tol <= math.pi:
            raise ValueError("heading tolerance must be in (0, pi]")

    def reached_by(self, s: HumanState) -> bool:
        near = math.hypot(s.x - self.x, s.y - self.y) <= self.radius
        aligned = abs(wrap_angle(s.alpha - self.alpha_w)) <= self.heading_tol
        return near and aligned


@dataclass(frozen=True)
class SurroundState:
    """Ego-centered polar surroundings: obstacle bins o and landmark block l."""

    o: np.ndarray
    l: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.o, self.l])


SURROUND_VEC_SIZE = OBSTACLE_VEC_SIZE + LANDMARK_VEC_SIZE


@dataclass(frozen=True)
class FloorPlan:
    resolution: float
    width: int
    height: int
    occupancy: np.ndarray  # bool (height, width), True = obstacle
    landmarks: tuple[Landmark, ...]
    graph: NavGraph

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.resolution, self.height * self.resolution

    def in_bounds(self, x: float, y: float) -> bool:
        ex, ey = self.extent
        return 0.0 <= x < ex and 0.0 <= y < ey

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(y / self.resolution), int(x / self.resolution)

    def is_free(self, x: float, y: float) -> bool:
        if not self.in_bounds(x, y):
            return False
        r, c = self.cell_of(x, y)
        return not bool(self.occupancy[r, c])

    @cached_property
    def occupied_centers(self) -> np.ndarray:
        rows, cols = np.nonzero(self.occupancy)
        return np.column_stack([(cols + 0.5) * self.resolution,
                                (rows + 0.5) * self.resolution])

    @cached_property
    def _occ_tree(self) -> cKDTree | None:
        if len(self.occupied_centers) == 0:
            return None
        return cKDTree(self.occupied_centers)

    @cached_property
    def _landmark_xy(self) -> np.ndarray:
        return np.array([[lm.x, lm.y] for lm in self.landmarks], dtype=np.float64
                        ).reshape(-1, 2)

    @cached_property
    def _landmark_tidx(self) -> np.ndarray:
        return np.array([LANDMARK_TYPES.index(lm.type) for lm in self.landmarks],
                        dtype=np.intp)


def load_map(path) -> FloorPlan:
    """Load and validate a map JSON file.

    Raises MapValidationError naming the offending entity on any schema or
    invariant violation.
    """
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise MapValidationError(f"invalid JSON in {path}: {e}") from e

    try:
        res = float(data["resolution"])
        width = int(data["width"])
        height = int(data["height"])
        rows = data["occupancy"]
        lm_raw = data["landmarks"]
        g_raw = data["graph"]
    except (KeyError, TypeError) as e:
        raise MapValidationError(f"map file missing or malformed field: {e}") from e

    if res <= 0:
        raise MapValidationError("resolution must be positive")
    if width < 1 or height < 1:
        raise MapValidationError("width and height must be at least 1")
    if len(rows) != height:
        raise MapValidationError(f"expected {height} occupancy rows, got {len(rows)}")
    occ = np.zeros((height, width), dtype=bool)
    for i, row in enumerate(rows):
        if len(row) != width or set(row) - {"0", "1"}:
            raise MapValidationError(f"occupancy row {i} is not {width} chars of 0/1")
        occ[i] = np.frombuffer(row.encode(), dtype=np.uint8) == ord("1")

    landmarks = []
    for lm in lm_raw:
        lid = str(lm["id"])
        if lm["type"] not in LANDMARK_TYPES:
            raise MapValidationError(f"landmark {lid!r}: unknown type {lm['type']!r}")
        landmarks.append(Landmark(lid, lm["type"], float(lm["x"]), float(lm["y"])))

    nodes = tuple((int(n["id"]), float(n["x"]), float(n["y"])) for n in g_raw["nodes"])
    ids = [nid for nid, _, _ in nodes]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise MapValidationError(f"duplicate graph node ids: {dup}")
    edges = tuple((int(a), int(b)) for a, b in g_raw["edges"])
    graph = NavGraph(nodes, edges)

    plan = FloorPlan(res, width, height, occ, tuple(landmarks), graph)

    for lm in plan.landmarks:
        if not plan.is_free(lm.x, lm.y):
            raise MapValidationError(f"landmark {lm.id!r} at ({lm.x}, {lm.y}) "
                                     "is out of bounds or on an occupied cell")
    id_set = set(ids)
    for nid, x, y in nodes:
        if not plan.is_free(x, y):
            raise MapValidationError(f"graph node {nid} at ({x}, {y}) "
                                     "is out of bounds or on an occupied cell")
    for a, b in edges:
        if a not in id_set or b not in id_set:
            raise MapValidationError(f"edge ({a}, {b}) references an unknown node")
        if a == b:
            raise MapValidationError(f"self-loop edge on node {a}")
        if graph.edge_cost(a, b) <= 0:
            raise MapValidationError(f"edge ({a}, {b}) has non-positive length "
                                     "(coincident nodes)")
    if ids:
        seen = {ids[0]}
        frontier = [ids[0]]
        while frontier:
            u = frontier.pop()
            for v, _ in graph.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    frontier.append(v)
        missing = sorted(id_set - seen)
        if missing:
            raise MapValidationError(f"graph not connected: nodes {missing} "
                                     f"unreachable from node {ids[0]}")
    return plan


def plan_path(graph: NavGraph, start: int, goal: int) -> Path:
    """A* over the corridor graph with a straight-line heuristic.

    Equal f-scores break toward the lower node id.  g-costs accumulate
    left-to-right along the path so the reported cost matches a plain
    Dijkstra pass bit for bit.
    """
    gx, gy = graph.node_pos(goal)
    graph.node_pos(start)

    def h(nid: int) -> float:
        x, y = graph.node_pos(nid)
        return math.hypot(gx - x, gy - y)

    g_score = {start: 0.0}
    came: dict[int, int] = {}
    open_heap: list[tuple[float, int]] = [(h(start), start)]
    closed: set[int] = set()
    while open_heap:
        f, u = heapq.heappop(open_heap)
        if u in closed:
            continue
        if u == goal:
            break
        closed.add(u)
        for v, c in graph.neighbors(u):
            cand = g_score[u] + c
            if cand < g_score.get(v, math.inf):
                g_score[v] = cand
                came[v] = u
                heapq.heappush(open_heap, (cand + h(v), v))

    if goal not in g_score:  # pragma: no cover - connectivity is validated at load
        raise ValueError(f"no path from {start} to {goal}")
    seq = [goal]
    while seq[-1] != start:
        seq.append(came[seq[-1]])
    seq.reverse()
    return Path(tuple(seq), g_score[goal],
                tuple(graph.node_pos(n) for n in seq))


def _cumlen(polyline: Sequence[tuple[float, float]]) -> np.ndarray:
    pts = np.asarray(polyline, dtype=np.float64)
    seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    return np.concatenate([[0.0], np.cumsum(seg)])


def project_to_path(pos: tuple[float, float], path: Path) -> tuple[float, float]:
    """(distance to polyline, arc-length of the closest point)."""
    pts = np.asarray(path.polyline, dtype=np.float64)
    p = np.asarray(pos, dtype=np.float64)
    if len(pts) == 1:
        return float(np.hypot(*(p - pts[0]))), 0.0
    a, b = pts[:-1], pts[1:]
    ab = b - a
    ab2 = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / ab2, 0.0, 1.0)
    closest = a + t[:, None] * ab
    d = np.hypot(*(p - closest).T)
    i = int(np.argmin(d))
    cum = _cumlen(path.polyline)
    return float(d[i]), float(cum[i] + t[i] * math.sqrt(ab2[i]))


def distance_to_path(pos: tuple[float, float], path: Path) -> float:
    return project_to_path(pos, path)[0]


def _point_at(path: Path, arc: float) -> tuple[float, float, float]:
    """Position and tangent heading at an arc-length along the polyline."""
    cum = _cumlen(path.polyline)
    arc = min(max(arc, 0.0), float(cum[-1]))
    # land exactly on a vertex -> use the outgoing segment, except at the end
    i = int(np.searchsorted(cum, arc, side="right")) - 1
    i = min(i, len(path.polyline) - 2)
    (xa, ya), (xb, yb) = path.polyline[i], path.polyline[i + 1]
    seg = cum[i + 1] - cum[i]
    u = (arc - cum[i]) / seg
    return xa + u * (xb - xa), ya + u * (yb - ya), math.atan2(yb - ya, xb - xa)


def generate_waypoints(path: Path, plan: FloorPlan,
                       d_w: float = WAYPOINT_OFFSET,
                       turn_threshold: float = TURN_THRESHOLD,
                       landmark_capture: float = LANDMARK_CAPTURE) -> list[Waypoint]:
    """Waypoints a fixed offset past turn vertices and nearby landmarks,
    plus one at the goal, each requiring the outgoing path heading."""
    if len(path.polyline) < 2:
        return []
    cum = _cumlen(path.polyline)
    total = float(cum[-1])
    arcs = []
    for i in range(1, len(path.polyline) - 1):
        (xa, ya), (xb, yb), (xc, yc) = path.polyline[i - 1:i + 2]
        turn = wrap_angle(math.atan2(yc - yb, xc - xb) - math.atan2(yb - ya, xb - xa))
        if abs(turn) > turn_threshold:
            arcs.append(min(float(cum[i]) + d_w, total))
    for lm in plan.landmarks:
        d, arc = project_to_path((lm.x, lm.y), path)
        if d <= landmark_capture:
            arcs.append(min(arc + d_w, total))
    arcs.append(total)
    out = []
    last = -1.0
    for arc in sorted(arcs):
        if arc - last < 1e-9:
            continue
        last = arc
        x, y, alpha = _point_at(path, arc)
        out.append(Waypoint(x, y, alpha))
    return out


def _bin_indices(dx: np.ndarray, dy: np.ndarray, alpha: float
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map ego offsets to (sector, ring) bins; mask selects offsets in range.

    Sector 0 is centered on the heading, 45 deg wide, counterclockwise
    positive.  Ring upper edges are inclusive.
    """
    r = np.hypot(dx, dy)
    ring = np.searchsorted(RING_BOUNDS, r, side="left")
    mask = ring < N_RINGS
    ego = np.arctan2(dy, dx) - alpha
    sector = np.floor((ego + math.pi / N_SECTORS) / (2 * math.pi / N_SECTORS)
                      ).astype(np.intp) % N_SECTORS
    return sector, ring, mask


def occupancy_features(plan: FloorPlan, s: HumanState) -> SurroundState:
    """Ego-centered polar obstacle and landmark bins around a pose.

    Raises ValueError if the pose is outside the grid.
    """
    if not plan.in_bounds(s.x, s.y):
        raise ValueError(f"position ({s.x}, {s.y}) outside grid bounds")
    o = np.zeros(OBSTACLE_VEC_SIZE)
    l = np.zeros(LANDMARK_VEC_SIZE)
    tree = plan._occ_tree
    if tree is not None:
        idx = tree.query_ball_point([s.x, s.y], RING_BOUNDS[-1])
        if idx:
            pts = plan.occupied_centers[idx]
            sec, ring, mask = _bin_indices(pts[:, 0] - s.x, pts[:, 1] - s.y, s.alpha)
            o[(sec[mask] * N_RINGS + ring[mask])] = 1.0
    if len(plan.landmarks):
        xy = plan._landmark_xy
        dx, dy = xy[:, 0] - s.x, xy[:, 1] - s.y
        sec, ring, mask = _bin_indices(dx, dy, s.alpha)
        r = np.hypot(dx, dy)
        # nearest landmark wins its bin, keeping each 4-slot block one-hot
        for j in np.argsort(r)[::-1]:
            if mask[j]:
                base = (sec[j] * N_RINGS + ring[j]) * len(LANDMARK_TYPES)
                l[base:base + len(LANDMARK_TYPES)] = 0.0
                l[base + plan._landmark_tidx[j]] = 1.0
    return SurroundState(o, l)


def occupancy_features_batch(plan: FloorPlan, xs: np.ndarray, ys: np.ndarray,
                             alphas: np.ndarray, clip: bool = False
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized features for B poses: returns (B, 24) and (B, 96) arrays.

    With clip=True, out-of-grid positions are clamped to the grid edge
    instead of raising; model rollouts can step outside the map.
    """
    xs = np.asarray(xs, dtype=np.float64).copy()
    ys = np.asarray(ys, dtype=np.float64).copy()
    ex, ey = plan.extent
    if clip:
        eps = plan.resolution * 1e-6
        np.clip(xs, 0.0, ex - eps, out=xs)
        np.clip(ys, 0.0, ey - eps, out=ys)
    elif np.any((xs < 0) | (xs >= ex) | (ys < 0) | (ys >= ey)):
        raise ValueError("batch contains positions outside grid bounds")
    B = len(xs)
    o = np.zeros((B, OBSTACLE_VEC_SIZE))
    l = np.zeros((B, LANDMARK_VEC_SIZE))
    tree = plan._occ_tree
    if tree is not None:
        hits = tree.query_ball_point(np.column_stack([xs, ys]), RING_BOUNDS[-1])
        for b, idx in enumerate(hits):
            if idx:
                pts = plan.occupied_centers[idx]
                sec, ring, mask = _bin_indices(pts[:, 0] - xs[b], pts[:, 1] - ys[b],
                                               float(alphas[b]))
                o[b, sec[mask] * N_RINGS + ring[mask]] = 1.0
    if len(plan.landmarks):
        xy = plan._landmark_xy
        for b in range(B):
            dx, dy = xy[:, 0] - xs[b], xy[:, 1] - ys[b]
            sec, ring, mask = _bin_indices(dx, dy, float(alphas[b]))
            r = np.hypot(dx, dy)
            for j in np.argsort(r)[::-1]:
                if mask[j]:
                    base = (sec[j] * N_RINGS + ring[j]) * len(LANDMARK_TYPES)
                    l[b, base:base + len(LANDMARK_TYPES)] = 0.0
                    l[b, base + plan._landmark_tidx[j]] = 1.0
    return o, l


def free_mask_batch(plan: FloorPlan, xs: np.ndarray,
                    ys: np.ndarray) -> np.ndarray:
    """Vectorized is_free: in bounds and on an unoccupied cell."""
    ex, ey = plan.extent
    inb = (xs >= 0.0) & (xs < ex) & (ys >= 0.0) & (ys < ey)
    c = np.clip((xs / plan.resolution).astype(int), 0, plan.width - 1)
    r = np.clip((ys / plan.resolution).astype(int), 0, plan.height - 1)
    return inb & ~plan.occupancy[r, c]


def advance_free_batch(plan: FloorPlan, x: np.ndarray, y: np.ndarray,
                       nx: np.ndarray, ny: np.ndarray,
                       step: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Move each row from (x, y) toward (nx, ny), stopping at the last
    sample point of the segment that lies in free space.

    Rows that start on a blocked cell pass through unchanged, so a
    predicted state that drifted into a wall can still be carried forward
    rather than pinned there.
    """
    dx, dy = nx - x, ny - y
    dmax = float(np.max(np.hypot(dx, dy), initial=0.0))
    if dmax <= 0.0:
        return nx.copy(), ny.copy()
    n = max(1, int(math.ceil(dmax / step)))
    fr = np.arange(1, n + 1) / n
    free = free_mask_batch(plan, x[:, None] + dx[:, None] * fr,
                           y[:, None] + dy[:, None] * fr)
    frac = np.cumprod(free, axis=1).sum(axis=1) / n
    keep = free_mask_batch(plan, x, y)
    return (np.where(keep, x + dx * frac, nx),
            np.where(keep, y + dy * frac, ny))
