import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabletop.errors import CategoryMismatch, EmptyGroundTruth
from tabletop.layout import make_scene
from tabletop.metrics import (FLOAT_THRESHOLD, Relation, SceneGraph, align_with_scene_graph, align_with_task,
                              collision_count, distance_moved, emd_to_gt, evaluate, extract_scene_graph,
                              float_rate, object_collision)
from tabletop.physics import SceneInstance

from conftest import box, instance, scene_of

CUBE = (0.1, 0.1, 0.1)


def test_object_collision_examples(library):
    assert object_collision(instance(library, box(0, CUBE, (0, 0, .05)), box(1, CUBE, (.3, 0, .05)))) == 0
    assert object_collision(instance(library, box(0, CUBE, (0, 0, .05)), box(1, CUBE, (.05, 0, .05)))) == 1.0
    three = instance(library, box(0, CUBE, (0, 0, .05)), box(1, CUBE, (.05, 0, .05)), box(2, CUBE, (.4, 0, .05)))
    assert object_collision(three) == pytest.approx(1 / 3)
    assert collision_count(three) == 1
    assert object_collision(instance(library, box(0, CUBE, (0, 0, .05)))) == 0


def test_oc_symmetric_under_reordering(library):
    objs = [box(0, CUBE, (0, 0, .05)), box(1, CUBE, (.05, 0, .05)), box(2, CUBE, (.4, 0, .05)),
            box(3, CUBE, (.38, .05, .05))]
    a = object_collision(instance(library, *objs))
    b = object_collision(instance(library, *objs[::-1]))
    assert a == b == pytest.approx(2 / 6)


def test_float_rate_examples(library):
    assert float_rate(instance(library, box(0, CUBE, (0, 0, .05)), box(1, CUBE, (.3, 0, .06)))) == 0.5
    assert float_rate(instance(library, box(0, CUBE, (0, 0, .05)), box(1, CUBE, (.3, 0, .05)))) == 0.0
    assert float_rate(instance(library, box(0, CUBE, (0, 0, .0504)))) == 0.0
    assert float_rate(instance(library, box(0, CUBE, (0, 0, .05 + 2 * FLOAT_THRESHOLD)))) == 1.0


def test_align_with_task():
    assert align_with_task(["apple"], ["apple", "banana"]) == 0.5
    assert align_with_task(["apple", "banana", "mug"], ["apple", "banana"]) == 1.0
    assert align_with_task(["apple"], ["apple", "apple"]) == 0.5
    with pytest.raises(EmptyGroundTruth):
        align_with_task(["apple"], [])


def _graph_keys(lib, *objs):
    inst = instance(lib, *objs)
    return set(extract_scene_graph(inst).keys())


def test_on_top_of(library):
    keys = _graph_keys(library, box(0, (.14, .14, .015), (0, 0, .0075), description="saucer", asset="saucer"),
                       box(1, (.09, .09, .1), (0, 0, .065), description="cup", asset="mug"))
    assert ("cup", "on_top_of", "saucer") in keys


def test_left_of(library):
    keys = _graph_keys(library, box(0, (.08,) * 3, (-.1, 0, .04), description="apple", asset="apple"),
                       box(1, (.18, .05, .04), (.1, 0, .02), description="banana", asset="banana"))
    assert keys == {("apple", "left_of", "banana")}
    # right_of is normalized to left_of with the arguments swapped
    keys = _graph_keys(library, box(0, (.08,) * 3, (.1, 0, .04), description="apple", asset="apple"),
                       box(1, (.18, .05, .04), (-.1, 0, .02), description="banana", asset="banana"))
    assert keys == {("banana", "left_of", "apple")}


def test_inside_tray(library):
    keys = _graph_keys(library, box(0, (.36, .26, .04), (0, 0, .02), description="tray", asset="tray"),
                       box(1, (.18, .025, .012), (0, 0, .008 + .006 + 1e-4), description="fork", asset="fork"))
    assert ("fork", "inside", "tray") in keys
    assert ("fork", "on_top_of", "tray") not in keys


def test_near(library):
    keys = _graph_keys(library, box(0, CUBE, (0, 0, .05), description="can"),
                       box(1, CUBE, (.11, .105, .05), description="box"))
    assert keys == {("box", "near", "can")}


def rel(s, p, o):
    return Relation(0, p, 1, s, o)


def test_align_with_scene_graph():
    g = SceneGraph([rel("apple", "left_of", "banana")])
    assert align_with_scene_graph(g, g) == 1.0
    assert align_with_scene_graph(SceneGraph([rel("banana", "left_of", "apple")]), g) == 0.0
    g2 = SceneGraph([rel("apple", "left_of", "banana"), rel("cup", "on_top_of", "saucer")])
    assert align_with_scene_graph(g, g2) == 0.5
    with pytest.raises(EmptyGroundTruth):
        align_with_scene_graph(g, SceneGraph())


def _s(*objs):
    return make_scene(list(objs))


def test_distance_moved():
    a = _s(box(0, CUBE, (0, 0, .05)))
    assert distance_moved(a, _s(box(0, CUBE, (.3, .4, .05)))) == pytest.approx(0.5)
    assert distance_moved(a, a) == 0
    two = _s(box(0, CUBE, (0, 0, .05)), box(1, CUBE, (.5, 0, .05)))
    swapped = _s(box(0, CUBE, (.5, 0, .05)), box(1, CUBE, (0, 0, .05)))
    assert distance_moved(two, swapped) == 0


def test_emd_to_gt():
    a = _s(box(0, CUBE, (0, 0, .05), 0.3))
    assert emd_to_gt(a, a) == 0
    assert emd_to_gt(_s(box(0, CUBE, (.08, 0, .05), 0.3)), a) == pytest.approx(0.08)
    with pytest.raises(CategoryMismatch):
        emd_to_gt(_s(box(0, CUBE, (0, 0, .05), description="mug")), a)


def _brute(a, b, cost):
    best = math.inf
    cats = sorted({o.category for o in a.objects})
    total = 0.0
    for cat in cats:
        ia = [o for o in a.objects if o.category == cat]
        ib = [o for o in b.objects if o.category == cat]
        best = min(sum(cost(x, y) for x, y in zip(ia, perm)) for perm in itertools.permutations(ib))
        total += best
    return total / len(a.objects)


@st.composite
def scene_pairs(draw):
    n = draw(st.integers(1, 6))
    cats = [draw(st.sampled_from(["apple", "mug", "box"])) for _ in range(n)]
    coord = st.floats(-0.5, 0.5, allow_nan=False)

    def make():
        return _s(*[box(i, CUBE, (draw(coord), draw(coord), draw(coord)), draw(st.floats(-3, 3)), description=c)
                    for i, c in enumerate(cats)])
    a, b = make(), make()
    return a, make_scene(list(reversed([{**o, "id": i} for i, o in enumerate(
        [{"description": x.description, "asset_id": x.asset_id, "size": x.size, "position": x.position,
          "yaw": x.yaw} for x in b.objects])])))


@settings(max_examples=150, deadline=None)
@given(scene_pairs())
def test_hungarian_matches_exhaustive(pair):
    from tabletop.layout import wrap_angle
    a, b = pair

    def dcost(x, y):
        return float(np.linalg.norm(np.subtract(x.position, y.position)))

    def ecost(x, y):
        return dcost(x, y) + 0.1 * abs(wrap_angle(x.yaw - y.yaw))
    assert distance_moved(a, b) == pytest.approx(_brute(a, b, dcost), abs=1e-12)
    assert emd_to_gt(a, b) == pytest.approx(_brute(a, b, ecost), abs=1e-12)


def test_evaluate_report(library):
    gt = scene_of(box(0, (.08,) * 3, (-.1, 0, .04), description="apple", asset="apple"),
                  box(1, (.18, .05, .04), (.1, 0, .02), description="banana", asset="banana"))
    pred = scene_of(box(0, (.08,) * 3, (.1, 0, .04), description="apple", asset="apple"),
                    box(1, (.18, .05, .04), (-.1, 0, .03), description="banana", asset="banana"))
    rep = evaluate([SceneInstance.build(pred, library)], [SceneInstance.build(gt, library)])
    d = rep.to_dict()
    assert set(d) >= {"oc", "float", "awt", "aws"}
    assert d["awt"] == 1.0 and d["aws"] == 0.0 and d["float"] == 0.5 and d["oc"] == 0.0
