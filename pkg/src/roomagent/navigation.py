"""Obstacle-map construction and repulsion-aware grid path planning.

The map rasterizes the floor and padded object footprints with the longest
scene axis scaled to 512 pixels. The distance field counts iterated 3x3
dilation steps (Chebyshev metric). Planning transforms the distance field
into per-cell step weights

    O = (M == 0)										(obstacle mask)
    M <- max(beta - gamma * M, 0) / beta				(repulsion in [0, 1])
    M <- (1 - alpha) * M + alpha						(weights in [alpha, 1])

and runs A* over 4-neighbors with g' = g + M[p'] and f = g' + alpha * h,
h being the Manhattan pixel distance. Since every step costs at least alpha,
alpha * h never overestimates and the search stays optimal.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import unary_union

from .scene import SceneModel, footprint

MAP_RESOLUTION = 512
DEFAULT_ALPHA = 0.5
DEFAULT_BETA = 0.5  # meters; matched to the 0.5 m simplification clearance
SIMPLIFY_CLEARANCE = 0.5  # meters, rectangle width for segment checks

_CHEBYSHEV_3X3 = np.ones((3, 3), dtype=bool)
_NEIGHBORS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class RepulsionParams:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")


@dataclass
class ObstacleMap:
    obstacle: np.ndarray          # bool grid, True = not navigable
    meters_per_pixel: float       # gamma
    origin: tuple[float, float]   # world coords of pixel (0, 0) corner
    distance: np.ndarray = field(default=None)  # int grid, dilation counts
    obstacle_polygons: list = field(default_factory=list)  # world-frame shapely

    def __post_init__(self):
        if self.distance is None:
            self.recompute_distance()

    @property
    def shape(self) -> tuple[int, int]:
        return self.obstacle.shape

    def recompute_distance(self):
        self.distance = dilation_distance(self.obstacle)

    def world_to_pixel(self, xy) -> tuple[int, int]:
        col = int((float(xy[0]) - self.origin[0]) / self.meters_per_pixel)
        row = int((float(xy[1]) - self.origin[1]) / self.meters_per_pixel)
        h, w = self.obstacle.shape
        return min(max(row, 0), h - 1), min(max(col, 0), w - 1)

    def pixel_to_world(self, rc) -> tuple[float, float]:
        r, c = rc
        return (
            self.origin[0] + (c + 0.5) * self.meters_per_pixel,
            self.origin[1] + (r + 0.5) * self.meters_per_pixel,
        )


def dilation_distance(obstacle: np.ndarray) -> np.ndarray:
    """Distance-to-obstacle in pixels via iterated 3x3 dilation: obstacles get
    0, a pixel swallowed on iteration k gets k. Stops when the grid fills."""
    covered = obstacle.copy()
    dist = np.zeros(obstacle.shape, dtype=np.int32)
    k = 0
    while not covered.all():
        if not covered.any():
            # no obstacle anywhere: treat the border as the obstacle source
            dist[:] = _border_distance(obstacle.shape)
            return dist
        k += 1
        grown = binary_dilation(covered, structure=_CHEBYSHEV_3X3)
        dist[grown & ~covered] = k
        covered = grown
    return dist


def _border_distance(shape) -> np.ndarray:
    h, w = shape
    rows = np.minimum(np.arange(h), np.arange(h)[::-1])[:, None]
    cols = np.minimum(np.arange(w), np.arange(w)[::-1])[None, :]
    return (np.minimum(rows, cols) + 1).astype(np.int32)


def build_map(scene: SceneModel, resolution: int = MAP_RESOLUTION) -> ObstacleMap:
    """Rasterize the floor and padded footprints; pixels covered by the floor
    and no object are navigable, everything else is an obstacle."""
    floor = scene.floor_polygon()
    if floor.area <= 0:
        raise PlanningError("degenerate floor polygon")
    minx, miny, maxx, maxy = floor.bounds
    extent = max(maxx - minx, maxy - miny)
    if extent <= 0:
        raise PlanningError("degenerate floor extent")
    gamma = extent / resolution
    width = max(1, int(math.ceil((maxx - minx) / gamma - 1e-9)))
    height = max(1, int(math.ceil((maxy - miny) / gamma - 1e-9)))

    static_prints = [footprint(o) for o in scene.objects if not o.dynamic]
    obstacle_union = unary_union(static_prints) if static_prints else None

    xs = minx + (np.arange(width) + 0.5) * gamma
    ys = miny + (np.arange(height) + 0.5) * gamma
    grid_x, grid_y = np.meshgrid(xs, ys)
    import shapely

    navigable = shapely.contains_xy(floor, grid_x.ravel(), grid_y.ravel())
    if obstacle_union is not None:
        inside_obj = shapely.intersects_xy(
            obstacle_union, grid_x.ravel(), grid_y.ravel()
        )
        navigable &= ~inside_obj
    obstacle = ~navigable.reshape(height, width)

    scene.meters_per_pixel = gamma
    polys = list(static_prints)
    return ObstacleMap(
        obstacle=obstacle,
        meters_per_pixel=gamma,
        origin=(minx, miny),
        obstacle_polygons=polys,
    )


def transform_weights(omap: ObstacleMap, params: RepulsionParams) -> np.ndarray:
    m = np.maximum(params.beta - omap.meters_per_pixel * omap.distance, 0.0) / params.beta
    return (1.0 - params.alpha) * m + params.alpha


def repair_endpoints(
    omap: ObstacleMap,
    start: tuple[int, int],
    goal: tuple[int, int],
    approach_dir: tuple[float, float] | None = None,
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Move blocked endpoints to free space. A blocked start carves the
    shortest of the four axis rays (those pixels become navigable for the rest
    of the episode); a blocked goal slides along approach_dir until free."""
    h, w = omap.shape
    for name, (r, c) in (("start", start), ("goal", goal)):
        if not (0 <= r < h and 0 <= c < w):
            raise PlanningError(f"{name} {r, c} outside map")

    new_start = start
    if omap.obstacle[start]:
        best = None  # (length, ray pixels)
        for dr, dc in _NEIGHBORS_4:
            ray = []
            r, c = start
            while 0 <= r < h and 0 <= c < w:
                ray.append((r, c))
                if not omap.obstacle[r, c]:
                    break
                r, c = r + dr, c + dc
            else:
                continue  # ran off the map without finding free space
            if best is None or len(ray) < len(best):
                best = ray
        if best is None:
            raise PlanningError("no free space reachable from start")
        for rc in best:
            omap.obstacle[rc] = False
        omap.recompute_distance()
        new_start = start

    new_goal = goal
    if omap.obstacle[goal]:
        if approach_dir is None:
            raise PlanningError("goal inside obstacle and no approach direction")
        dx, dy = float(approach_dir[0]), float(approach_dir[1])
        norm = math.hypot(dx, dy)
        if norm <= 0:
            raise PlanningError("zero approach direction")
        dx, dy = dx / norm, dy / norm
        r0, c0 = goal
        t = 0.0
        while True:
            t += 0.5
            r = int(round(r0 + dy * t))
            c = int(round(c0 + dx * t))
            if not (0 <= r < h and 0 <= c < w):
                raise PlanningError("goal slide left the map without free space")
            if not omap.obstacle[r, c]:
                new_goal = (r, c)
                break
    return new_start, new_goal


@dataclass
class PathPlan:
    dense: list[tuple[int, int]]             # pixel path, 4-adjacent
    waypoints: list[tuple[float, float]]     # simplified, world meters
    cost: float                              # accumulated transformed weight


def plan(
    omap: ObstacleMap,
    params: RepulsionParams,
    start: tuple[int, int],
    goal: tuple[int, int],
) -> PathPlan:
    """Repulsion-weighted A* from start to goal (both free pixels)."""
    if omap.obstacle[start]:
        raise PlanningError("start inside obstacle (repair first)")
    if omap.obstacle[goal]:
        raise PlanningError("goal inside obstacle (repair first)")
    weights = transform_weights(omap, params)
    h, w = omap.shape
    gr, gc = goal

    def heuristic(r: int, c: int) -> int:
        return abs(r - gr) + abs(c - gc)

    g = np.full((h, w), np.inf)
    g[start] = 0.0
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    closed = np.zeros((h, w), dtype=bool)
    # ties: smaller f, then smaller h, then row-major, for determinism
    open_heap = [(params.alpha * heuristic(*start), heuristic(*start), start)]
    while open_heap:
        f, _, (r, c) = heapq.heappop(open_heap)
        if closed[r, c]:
            continue
        closed[r, c] = True
        if (r, c) == goal:
            break
        for dr, dc in _NEIGHBORS_4:
            rr, cc = r + dr, c + dc
            if not (0 <= rr < h and 0 <= cc < w) or omap.obstacle[rr, cc]:
                continue
            cand = g[r, c] + weights[rr, cc]
            if cand < g[rr, cc]:
                g[rr, cc] = cand
                parent[(rr, cc)] = (r, c)
                hh = heuristic(rr, cc)
                heapq.heappush(open_heap, (cand + params.alpha * hh, hh, (rr, cc)))
    if not closed[goal]:
        raise PlanningError("goal unreachable")

    dense = [goal]
    while dense[-1] != start:
        dense.append(parent[dense[-1]])
    dense.reverse()
    waypoints = simplify(omap, dense)
    return PathPlan(dense=dense, waypoints=waypoints, cost=float(g[goal]))


def _corners(dense: list[tuple[int, int]]) -> list[tuple[int, int]]:
    if len(dense) <= 2:
        return list(dense)
    pts = [dense[0]]
    for prev, cur, nxt in zip(dense, dense[1:], dense[2:]):
        if (cur[0] - prev[0], cur[1] - prev[1]) != (nxt[0] - cur[0], nxt[1] - cur[1]):
            pts.append(cur)
    pts.append(dense[-1])
    return pts


def segment_clear(omap: ObstacleMap, a_world, b_world, width: float = SIMPLIFY_CLEARANCE) -> bool:
    """True when the segment, inflated to a `width`-wide rectangle, intersects
    no obstacle polygon and stays on the floor side of the map."""
    seg = LineString([tuple(a_world), tuple(b_world)])
    if seg.length == 0:
        rect = Point(a_world).buffer(width / 2.0, quad_segs=4)
    else:
        rect = seg.buffer(width / 2.0, cap_style=2, join_style=2)
    for poly in omap.obstacle_polygons:
        if rect.intersects(poly):
            return False
    # walls (outside-floor region): check against the rasterized mask
    steps = max(2, int(seg.length / max(omap.meters_per_pixel, 1e-9)) + 1)
    for t in np.linspace(0.0, 1.0, steps):
        x = a_world[0] + (b_world[0] - a_world[0]) * t
        y = a_world[1] + (b_world[1] - a_world[1]) * t
        if omap.obstacle[omap.world_to_pixel((x, y))]:
            return False
    return True


def simplify(omap: ObstacleMap, dense: list[tuple[int, int]]) -> list[tuple[float, float]]:
    """Corner extraction then greedy skipping: connect each kept waypoint to
    the farthest corner whose joining rectangle stays clear of obstacles."""
    if not dense:
        return []
    corners = _corners(dense)
    world = [omap.pixel_to_world(rc) for rc in corners]
    if len(world) == 1:
        return world
    kept = [world[0]]
    i = 0
    while i < len(world) - 1:
        j = len(world) - 1
        while j > i + 1 and not segment_clear(omap, world[i], world[j]):
            j -= 1
        kept.append(world[j])
        i = j
    return kept


# ---------------------------------------------------------------------------
# high-level helper used by the agent: world-frame planning


def plan_world(
    omap: ObstacleMap,
    params: RepulsionParams,
    start_xy,
    goal_xy,
    approach_dir=None,
) -> PathPlan:
    start = omap.world_to_pixel(start_xy)
    goal = omap.world_to_pixel(goal_xy)
    start, goal = repair_endpoints(omap, start, goal, approach_dir)
    return plan(omap, params, start, goal)


def dump_weights_pgm(omap: ObstacleMap, params: RepulsionParams) -> bytes:
    """P2 PGM of the transformed weight grid, values scaled x1000 (bit-exact)."""
    weights = np.round(transform_weights(omap, params) * 1000).astype(int)
    h, w = weights.shape
    lines = [f"P2", f"{w} {h}", "1000"]
    for r in range(h):
        lines.append(" ".join(str(v) for v in weights[r]))
    return ("\n".join(lines) + "\n").encode("ascii")
