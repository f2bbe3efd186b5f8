import math

import numpy as np
import pytest
from shapely.geometry import Point, Polygon

from roomagent.scene import (
    Box3, ObjectRecord, SceneError, SceneModel, footprint, infer_parents,
    label_anchor_pixel, load_scene, parse_scene,
)

MINIMAL = """
floor: 0,0 6,0 6,6 0,6

object sofa1
  category: sofa
  position: 2.0 2.0 0.0
  yaw: 0.0
  box: -0.5,-0.5,0.0 0.5,0.5,0.5
"""


def make_object(obj_id="item1", category="item", pos=(0, 0, 0), yaw=0.0, boxes=None,
                **kw):
    boxes = boxes or [Box3(lo=(-0.5, -0.5, 0.0), hi=(0.5, 0.5, 1.0))]
    index = int(obj_id[len(category):])
    return ObjectRecord(
        id=obj_id, category=category, instance_index=index, position=pos,
        yaw=yaw, convex_boxes=boxes, **kw,
    )


class TestParsing:
    def test_minimal_scene(self):
        scene = parse_scene(MINIMAL)
        assert len(scene.objects) == 1
        assert scene.objects[0].parent_id is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_scene(tmp_path / "nope.scene")

    def test_duplicate_id_names_object(self):
        text = MINIMAL + "\nobject sofa1\n  category: sofa\n  box: -1,-1,0 1,1,1\n"
        with pytest.raises(SceneError, match="sofa1"):
            parse_scene(text)

    def test_parse_error_carries_line(self):
        bad = MINIMAL.replace("yaw: 0.0", "yaw: zero")
        with pytest.raises(SceneError, match="line"):
            parse_scene(bad)

    def test_box_min_must_be_below_max(self):
        bad = MINIMAL.replace("box: -0.5,-0.5,0.0 0.5,0.5,0.5",
                              "box: 0.5,-0.5,0.0 -0.5,0.5,0.5")
        with pytest.raises(SceneError):
            parse_scene(bad)

    def test_front_direction_normalized(self):
        text = MINIMAL + "  front: 2 0\n"
        scene = parse_scene(text)
        assert scene.objects[0].front_direction == (1.0, 0.0)

    def test_unknown_field_rejected(self):
        with pytest.raises(SceneError, match="unknown field"):
            parse_scene(MINIMAL + "  wobble: 3\n")

    def test_display_name_rule(self):
        with pytest.raises(SceneError):
            ObjectRecord(
                id="sofa1", category="couch", instance_index=1,
                position=(0, 0, 0), yaw=0.0,
                convex_boxes=[Box3(lo=(-0.5, -0.5, 0.0), hi=(0.5, 0.5, 1.0))],
            )

    def test_parent_inference_on_load(self, tmp_path):
        text = """
floor: 0,0 8,0 8,8 0,8
object sofa1
  category: sofa
  position: 6.0 6.0 0.0
  box: -0.8,-0.4,0.0 0.8,0.4,0.5
object desk1
  category: desk
  position: 2.0 2.0 0.0
  box: -0.6,-0.4,0.0 0.6,0.4,0.75
object trinket1
  category: trinket
  position: 2.0 2.0 0.0
  box: -0.05,-0.05,0.75 0.05,0.05,0.85
"""
        path = tmp_path / "scene.scene"
        path.write_text(text)
        scene = load_scene(path)
        assert scene.get("trinket1").parent_id == "desk1"
        assert scene.get("sofa1").parent_id is None


class TestFootprint:
    def test_unit_box_padded_square(self):
        obj = make_object(boxes=[Box3(lo=(-0.5, -0.5, 0.0), hi=(0.5, 0.5, 1.0))])
        poly = footprint(obj)
        minx, miny, maxx, maxy = poly.bounds
        assert maxx - minx == pytest.approx(1.2)
        assert maxy - miny == pytest.approx(1.2)
        assert poly.area == pytest.approx(1.2 * 1.2)

    def test_quarter_turn_symmetry(self):
        obj0 = make_object(boxes=[Box3(lo=(-0.5, -0.5, 0.0), hi=(0.5, 0.5, 1.0))])
        obj90 = make_object(yaw=math.pi / 2,
                            boxes=[Box3(lo=(-0.5, -0.5, 0.0), hi=(0.5, 0.5, 1.0))])
        assert footprint(obj0).symmetric_difference(footprint(obj90)).area < 1e-9

    def test_full_turn_invariance(self):
        boxes = [Box3(lo=(-0.7, -0.2, 0.0), hi=(0.4, 0.5, 1.0))]
        a = footprint(make_object(yaw=0.7, boxes=boxes))
        b = footprint(make_object(yaw=0.7 + 2 * math.pi, boxes=boxes))
        assert a.symmetric_difference(b).area < 1e-9

    def test_contains_all_transformed_corners(self):
        obj = make_object(
            pos=(1.0, 2.0, 0.0), yaw=0.6,
            boxes=[
                Box3(lo=(-0.4, -0.3, 0.0), hi=(0.2, 0.5, 0.6)),
                Box3(lo=(0.0, -0.6, 0.0), hi=(0.7, 0.0, 1.1)),
            ],
        )
        poly = footprint(obj)
        for corner in obj.world_corners():
            assert poly.buffer(1e-9).contains(Point(corner[0], corner[1]))

    def test_union_area_against_monte_carlo(self):
        # two overlapping boxes; oracle: point-in-union sampling
        obj = make_object(
            boxes=[
                Box3(lo=(-0.5, -0.5, 0.0), hi=(0.3, 0.3, 1.0)),
                Box3(lo=(-0.1, -0.1, 0.0), hi=(0.6, 0.6, 1.0)),
            ],
            yaw=0.3,
        )
        poly = footprint(obj)
        minx, miny, maxx, maxy = poly.bounds
        rng = np.random.default_rng(42)
        n = 1_000_000
        xs = rng.uniform(minx, maxx, n)
        ys = rng.uniform(miny, maxy, n)
        from shapely import contains_xy

        hits = contains_xy(poly, xs, ys).sum()
        mc_area = (maxx - minx) * (maxy - miny) * hits / n
        assert abs(mc_area - poly.area) / poly.area < 0.01


class TestInferParents:
    def _scene(self, objects):
        return SceneModel(floor=[(0, 0), (20, 0), (20, 20), (0, 20)], objects=objects)

    def test_contained_lower_larger_wins(self):
        desk = make_object("desk1", "desk", pos=(5, 5, 0),
                           boxes=[Box3(lo=(-1, -1, 0), hi=(1, 1, 0.8))])
        trinket = make_object("trinket1", "trinket", pos=(5, 5, 0),
                              boxes=[Box3(lo=(-0.05, -0.05, 0.8), hi=(0.05, 0.05, 0.9))])
        parents = infer_parents(self._scene([desk, trinket]))
        assert parents == {"trinket1": "desk1"}

    def test_disjoint_objects_parentless(self):
        a = make_object("desk1", "desk", pos=(2, 2, 0))
        b = make_object("desk2", "desk", pos=(10, 10, 0))
        assert infer_parents(self._scene([a, b])) == {}

    def test_forest_no_cycles(self):
        objs = [
            make_object("desk1", "desk", pos=(5, 5, 0),
                        boxes=[Box3(lo=(-1.5, -1.5, 0), hi=(1.5, 1.5, 0.7))]),
            make_object("tray1", "tray", pos=(5, 5, 0),
                        boxes=[Box3(lo=(-0.4, -0.4, 0.7), hi=(0.4, 0.4, 0.75))]),
            make_object("cup1", "cup", pos=(5, 5, 0),
                        boxes=[Box3(lo=(-0.05, -0.05, 0.75), hi=(0.05, 0.05, 0.85))]),
        ]
        parents = infer_parents(self._scene(objs))
        # no cycles: walking up always terminates
        for start in parents:
            seen = set()
            node = start
            while node in parents:
                assert node not in seen
                seen.add(node)
                node = parents[node]

    def test_matches_exhaustive_grouping_oracle(self):
        rng = np.random.default_rng(3)
        objs = []
        for i in range(6):
            x, y = rng.uniform(2, 18, 2)
            size = rng.uniform(0.2, 1.5)
            objs.append(
                make_object(f"thing{i+1}", "thing", pos=(x, y, 0),
                            boxes=[Box3(lo=(-size, -size, 0), hi=(size, size, 0.5))])
            )
        scene = self._scene(objs)
        parents = infer_parents(scene)
        # oracle: brute-force pairwise containment graph, connected components
        from roomagent.scene import _contains

        polys = [footprint(o) for o in objs]
        adj = {i: {i} for i in range(len(objs))}
        for i in range(len(objs)):
            for j in range(len(objs)):
                if i != j and (_contains(polys[i], polys[j]) or _contains(polys[j], polys[i])):
                    adj[i].add(j)
                    adj[j].add(i)

        def component(i):
            seen, stack = set(), [i]
            while stack:
                k = stack.pop()
                if k in seen:
                    continue
                seen.add(k)
                stack.extend(adj[k] - seen)
            return frozenset(seen)

        for i in range(len(objs)):
            comp = component(i)
            members_with_parents = {
                k for k in comp
                if objs[k].id in parents or objs[k].id in parents.values()
            }
            if len(comp) == 1:
                assert objs[i].id not in parents
            else:
                assert members_with_parents == comp

    def test_parent_area_rule(self):
        small = make_object("small1", "small", pos=(5, 5, 0),
                            boxes=[Box3(lo=(-0.2, -0.2, 0.5), hi=(0.2, 0.2, 0.8))])
        big = make_object("big1", "big", pos=(5, 5, 0),
                          boxes=[Box3(lo=(-1, -1, 0), hi=(1, 1, 0.5))])
        parents = infer_parents(self._scene([small, big]))
        assert parents.get("small1") == "big1"
        assert footprint(big).area >= footprint(small).area


class TestLabelAnchorPixel:
    def test_all_true_square_center(self):
        mask = np.ones((5, 5), dtype=bool)
        assert label_anchor_pixel(mask) == (2, 2)

    def test_single_pixel(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 3] = True
        assert label_anchor_pixel(mask) == (1, 3)

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            label_anchor_pixel(np.zeros((3, 3), dtype=bool))

    @staticmethod
    def _bfs_clearance(mask, r, c):
        from collections import deque

        h, w = mask.shape
        queue = deque([(r, c, 0)])
        seen = {(r, c)}
        while queue:
            rr, cc, d = queue.popleft()
            if not (0 <= rr < h and 0 <= cc < w) or not mask[rr, cc]:
                return d
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                if (rr + dr, cc + dc) not in seen:
                    seen.add((rr + dr, cc + dc))
                    queue.append((rr + dr, cc + dc, d + 1))
        return 10**9

    def test_l_shape_matches_bfs_oracle(self):
        mask = np.zeros((12, 12), dtype=bool)
        mask[1:11, 1:5] = True
        mask[7:11, 1:11] = True
        r, c = label_anchor_pixel(mask)
        assert mask[r, c]
        best = max(
            self._bfs_clearance(mask, i, j)
            for i in range(12) for j in range(12) if mask[i, j]
        )
        assert self._bfs_clearance(mask, r, c) == best

    def test_ties_row_major(self):
        mask = np.ones((2, 4), dtype=bool)  # every pixel has clearance 1
        assert label_anchor_pixel(mask) == (0, 0)
