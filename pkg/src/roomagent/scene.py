"""In-memory scene model: objects with convex-box collision geometry on a floor polygon.

Scene files are UTF-8 key-value text (see docs/scene_format.md). World frame:
ground plane is XY, height is Z. Footprints are the yaw-rotated convex boxes
projected to XY, convex-hulled per box, padded outward by 0.10 m, and unioned.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import MultiPoint, Point, Polygon
from shapely.ops import unary_union

from .geometry import rot2, wrap_angle

FOOTPRINT_PADDING_M = 0.10
# Overlap >= 80% of the child footprint (plus centroid containment) counts as
# containment for parent inference; avoids flapping on touching boundaries.
CONTAINMENT_OVERLAP_RATIO = 0.80
# Footprint areas within 10% of each other are "similar"; the lower object wins.
AREA_SIMILARITY_BAND = 0.10
DEFAULT_DYNAMIC_DENSITY = 50.0  # kg/m^3, light decorative objects


class SceneError(ValueError):
    """Raised on scene-file parse errors or invariant violations."""


@dataclass(frozen=True)
class Box3:
    """Axis-aligned box in object-local frame, min corner < max corner per axis."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    role: str | None = None  # e.g. "seat" / "sleep" surface tag

    def __post_init__(self):
        for a, b in zip(self.lo, self.hi):
            if not (math.isfinite(a) and math.isfinite(b)):
                raise SceneError("box corner not finite")
            if not a < b:
                raise SceneError(f"box min {self.lo} not strictly below max {self.hi}")

    def corners(self) -> np.ndarray:
        """All 8 corners, shape (8, 3)."""
        xs = [self.lo[0], self.hi[0]]
        ys = [self.lo[1], self.hi[1]]
        zs = [self.lo[2], self.hi[2]]
        return np.array([(x, y, z) for x in xs for y in ys for z in zs])


@dataclass
class ObjectRecord:
    id: str
    category: str
    instance_index: int
    position: tuple[float, float, float]
    yaw: float
    convex_boxes: list[Box3]
    front_direction: tuple[float, float] | None = None
    dynamic: bool = False
    mass_density: float = DEFAULT_DYNAMIC_DENSITY
    parent_id: str | None = None

    def __post_init__(self):
        if not self.convex_boxes:
            raise SceneError(f"object {self.id!r}: convex_boxes empty")
        if self.instance_index < 1:
            raise SceneError(f"object {self.id!r}: instance_index must be positive")
        if self.id != f"{self.category}{self.instance_index}":
            raise SceneError(
                f"object {self.id!r}: display name must be category+index "
                f"({self.category}{self.instance_index})"
            )
        if not all(math.isfinite(v) for v in self.position):
            raise SceneError(f"object {self.id!r}: position not finite")
        self.yaw = wrap_angle(self.yaw)
        if self.front_direction is not None:
            n = math.hypot(*self.front_direction)
            if abs(n - 1.0) > 1e-6:
                raise SceneError(f"object {self.id!r}: front_direction not unit length")

    def world_corners(self) -> np.ndarray:
        """All convex-box corners in world frame, shape (8*n_boxes, 3)."""
        rot = rot2(self.yaw)
        pts = np.concatenate([b.corners() for b in self.convex_boxes])
        xy = pts[:, :2] @ rot.T + np.asarray(self.position[:2])
        z = pts[:, 2] + self.position[2]
        return np.column_stack([xy, z])

    def world_aabb(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.world_corners()
        return pts.min(axis=0), pts.max(axis=0)

    def base_height(self) -> float:
        return float(min(b.lo[2] for b in self.convex_boxes)) + self.position[2]

    def front_yaw(self) -> float | None:
        if self.front_direction is None:
            return None
        return math.atan2(self.front_direction[1], self.front_direction[0])


@dataclass
class SceneModel:
    floor: list[tuple[float, float]]
    objects: list[ObjectRecord]
    meters_per_pixel: float | None = None
    _by_id: dict[str, ObjectRecord] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        poly = Polygon(self.floor)
        if len(self.floor) < 3 or not poly.is_valid or poly.area <= 0:
            raise SceneError("floor polygon must be simple with positive area")
        seen = set()
        for obj in self.objects:
            if obj.id in seen:
                raise SceneError(f"duplicate object id {obj.id!r}")
            seen.add(obj.id)
        self._by_id = {o.id: o for o in self.objects}

    def floor_polygon(self) -> Polygon:
        return Polygon(self.floor)

    def get(self, object_id: str) -> ObjectRecord:
        try:
            return self._by_id[object_id]
        except KeyError:
            raise SceneError(f"unknown object id {object_id!r}") from None

    def has(self, object_id: str) -> bool:
        return object_id in self._by_id


def footprint(obj: ObjectRecord, padding: float = FOOTPRINT_PADDING_M):
    """Padded 2D outline of an object.

    Per-box: corners -> yaw+position transform -> XY projection -> convex hull
    -> outward pad; boxes are padded before the union so concavities between
    boxes stay padded. Returns a shapely Polygon (or MultiPolygon for
    disconnected box sets).
    """
    rot = rot2(obj.yaw)
    pos = np.asarray(obj.position[:2])
    parts = []
    for box in obj.convex_boxes:
        xy = box.corners()[:, :2] @ rot.T + pos
        hull = MultiPoint([tuple(p) for p in xy]).convex_hull
        # mitre join keeps the outline polygonal (a padded box stays a box)
        parts.append(hull.buffer(padding, join_style=2))
    return unary_union(parts)


def _contains(parent_poly, child_poly) -> bool:
    if child_poly.area <= 0:
        return parent_poly.contains(child_poly.centroid)
    overlap = parent_poly.intersection(child_poly).area
    return (
        parent_poly.contains(child_poly.centroid)
        and overlap >= CONTAINMENT_OVERLAP_RATIO * child_poly.area
    )


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def infer_parents(scene: SceneModel) -> dict[str, str]:
    """Group objects by footprint containment and pick a parent per group.

    The parent is the object with the largest footprint area (areas within 10%
    are treated as similar) and, within that band, the lowest base height;
    remaining ties break by lexicographic id.
    """
    objs = scene.objects
    polys = [footprint(o) for o in objs]
    uf = _UnionFind(len(objs))
    for i in range(len(objs)):
        for j in range(i + 1, len(objs)):
            if _contains(polys[i], polys[j]) or _contains(polys[j], polys[i]):
                uf.union(i, j)

    groups: dict[int, list[int]] = {}
    for i in range(len(objs)):
        groups.setdefault(uf.find(i), []).append(i)

    parents: dict[str, str] = {}
    for members in groups.values():
        if len(members) < 2:
            continue
        max_area = max(polys[i].area for i in members)
        candidates = [
            i for i in members if polys[i].area >= (1.0 - AREA_SIMILARITY_BAND) * max_area
        ]
        candidates.sort(key=lambda i: (objs[i].base_height(), objs[i].id))
        head = candidates[0]
        for i in members:
            if i != head:
                parents[objs[i].id] = objs[head].id
    return parents


def label_anchor_pixel(mask: np.ndarray) -> tuple[int, int]:
    """Pixel of a boolean mask with maximal 4-connected distance to any false
    pixel or the grid border; ties break in row-major order."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or not mask.any():
        raise ValueError("mask must be a 2D boolean grid with at least one true pixel")
    h, w = mask.shape
    dist = np.full((h, w), -1, dtype=int)
    queue: deque[tuple[int, int]] = deque()
    # multi-source BFS seeded from every mask cell adjacent to false/off-grid
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            if (
                r == 0 or r == h - 1 or c == 0 or c == w - 1
                or not mask[r - 1, c] or not mask[r + 1, c]
                or not mask[r, c - 1] or not mask[r, c + 1]
            ):
                dist[r, c] = 1
                queue.append((r, c))
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] and dist[rr, cc] < 0:
                dist[rr, cc] = dist[r, c] + 1
                queue.append((rr, cc))
    dist[~mask] = -1
    best = int(np.argmax(dist))
    return best // w, best % w


# ---------------------------------------------------------------------------
# scene file parsing


def _parse_floats(text: str, n: int, where: str) -> tuple[float, ...]:
    parts = text.replace(",", " ").split()
    if len(parts) != n:
        raise SceneError(f"{where}: expected {n} numbers, got {len(parts)}")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise SceneError(f"{where}: {exc}") from None
    return vals


def parse_scene(text: str) -> SceneModel:
    floor: list[tuple[float, float]] | None = None
    objects: list[ObjectRecord] = []
    current: dict | None = None

    def flush(lineno: int):
        nonlocal current
        if current is None:
            return
        where = f"line {current['line']}"
        if "category" not in current:
            raise SceneError(f"{where}: object {current['id']!r} missing category")
        cat = current["category"]
        idx = current.get("index")
        if idx is None:
            suffix = current["id"][len(cat):]
            if not suffix.isdigit():
                raise SceneError(
                    f"{where}: object {current['id']!r} id must be category+index"
                )
            idx = int(suffix)
        try:
            objects.append(
                ObjectRecord(
                    id=current["id"],
                    category=cat,
                    instance_index=idx,
                    position=current.get("position", (0.0, 0.0, 0.0)),
                    yaw=current.get("yaw", 0.0),
                    convex_boxes=current.get("boxes", []),
                    front_direction=current.get("front"),
                    dynamic=current.get("dynamic", False),
                    mass_density=current.get("density", DEFAULT_DYNAMIC_DENSITY),
                )
            )
        except SceneError as exc:
            raise SceneError(f"{where}: {exc}") from None
        current = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        if line.startswith("floor:"):
            body = line[len("floor:"):].strip()
            pts = []
            for chunk in body.split():
                vals = _parse_floats(chunk, 2, where)
                pts.append((vals[0], vals[1]))
            floor = pts
            continue
        if line.startswith("object "):
            flush(lineno)
            obj_id = line[len("object "):].strip()
            if not obj_id:
                raise SceneError(f"{where}: empty object id")
            current = {"id": obj_id, "line": lineno}
            continue
        if current is None:
            raise SceneError(f"{where}: field outside an object block: {line!r}")
        if ":" not in line:
            raise SceneError(f"{where}: expected 'key: value', got {line!r}")
        key, value = (s.strip() for s in line.split(":", 1))
        if key == "category":
            current["category"] = value
        elif key == "index":
            current["index"] = int(value)
        elif key == "position":
            current["position"] = _parse_floats(value, 3, where)
        elif key == "yaw":
            current["yaw"] = _parse_floats(value, 1, where)[0]
        elif key == "box":
            role = None
            if "role=" in value:
                value, role_part = value.split("role=", 1)
                role = role_part.strip()
            vals = _parse_floats(value, 6, where)
            try:
                box = Box3(lo=vals[:3], hi=vals[3:], role=role)
            except SceneError as exc:
                raise SceneError(f"{where}: {exc}") from None
            current.setdefault("boxes", []).append(box)
        elif key == "front":
            vals = _parse_floats(value, 2, where)
            n = math.hypot(*vals)
            if n <= 0:
                raise SceneError(f"{where}: zero front direction")
            current["front"] = (vals[0] / n, vals[1] / n)
        elif key == "dynamic":
            if value not in ("true", "false"):
                raise SceneError(f"{where}: dynamic must be true/false")
            current["dynamic"] = value == "true"
        elif key == "density":
            current["density"] = _parse_floats(value, 1, where)[0]
        else:
            raise SceneError(f"{where}: unknown field {key!r}")

    flush(-1)
    if floor is None:
        raise SceneError("scene file missing floor line")
    scene = SceneModel(floor=floor, objects=objects)
    for child, parent in infer_parents(scene).items():
        scene.get(child).parent_id = parent
    return scene


def load_scene(path) -> SceneModel:
    """Parse and validate a scene file; parent_id fields are populated."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"scene not found: {p}")
    return parse_scene(p.read_text(encoding="utf-8"))
