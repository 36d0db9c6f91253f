import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabletop.errors import LengthMismatch, SchemaError, UnitError
from tabletop.layout import (LayoutScene, TableSpec, apply_pose_vector, category_token, make_scene, parse_layout,
                             serialize_layout, split_pose_vector, to_pose_vector, wrap_angle)

from conftest import box

MINIMAL = {"table": {"width": 1.0, "depth": 0.6, "thickness": 0.04},
           "objects": [{"id": 0, "description": "red mug", "size": [0.1, 0.1, 0.1], "position": [0, 0, 0.05]}]}


def test_minimal_scene_parses():
    s = parse_layout(json.dumps(MINIMAL))
    assert len(s) == 1
    assert s.objects[0].category == "mug"
    assert parse_layout(serialize_layout(s)) == s


def test_yaw_three_half_pi_wraps():
    doc = json.loads(json.dumps(MINIMAL))
    doc["objects"][0]["yaw"] = 3 * math.pi / 2
    assert parse_layout(json.dumps(doc)).objects[0].yaw == pytest.approx(-math.pi / 2)


def test_missing_size_names_field():
    doc = json.loads(json.dumps(MINIMAL))
    del doc["objects"][0]["size"]
    with pytest.raises(SchemaError, match="size"):
        parse_layout(json.dumps(doc))


@pytest.mark.parametrize("bad", [[0.1, 0.0, 0.1], [0.1, -1, 0.1]])
def test_nonpositive_size_is_unit_error(bad):
    doc = json.loads(json.dumps(MINIMAL))
    doc["objects"][0]["size"] = bad
    with pytest.raises(UnitError):
        parse_layout(json.dumps(doc))


def test_invalid_json_and_wrong_types():
    with pytest.raises(SchemaError):
        parse_layout("{not json")
    doc = json.loads(json.dumps(MINIMAL))
    doc["objects"][0]["position"] = [0, 0]
    with pytest.raises(SchemaError):
        parse_layout(json.dumps(doc))
    doc = json.loads(json.dumps(MINIMAL))
    doc["objects"][0]["role"] = "hero"
    with pytest.raises(SchemaError):
        parse_layout(json.dumps(doc))


def test_empty_objects_serializes():
    s = LayoutScene(TableSpec())
    doc = json.loads(serialize_layout(s))
    assert doc["objects"] == []
    assert parse_layout(serialize_layout(s)) == s


def test_passthrough_keys_preserved():
    doc = json.loads(json.dumps(MINIMAL))
    doc["source"] = {"tool": "x", "n": [1, 2]}
    doc["table"]["material"] = "oak"
    doc["objects"][0]["color"] = "red"
    out = json.loads(serialize_layout(parse_layout(json.dumps(doc))))
    assert out["source"] == doc["source"]
    assert out["table"]["material"] == "oak"
    assert out["objects"][0]["color"] == "red"


def test_duplicate_ids_rejected():
    with pytest.raises(SchemaError):
        make_scene([box(0, (0.1,) * 3, (0, 0, 0.05)), box(0, (0.1,) * 3, (0.3, 0, 0.05))])


def test_pose_vector_block_order():
    s = make_scene([box(0, (0.1,) * 3, (0.1, 0.2, 0.3), 0.5)])
    np.testing.assert_array_equal(to_pose_vector(s), [0.1, 0.2, 0.3, 0.5])
    s2 = make_scene([box(0, (0.1,) * 3, (1, 2, 3), 0.1), box(1, (0.1,) * 3, (4, 5, 6), 0.2)])
    np.testing.assert_array_equal(to_pose_vector(s2), [1, 2, 3, 4, 5, 6, 0.1, 0.2])


def test_apply_pose_vector_roundtrip_and_shift():
    s = make_scene([box(0, (0.1,) * 3, (0.1, 0.2, 0.05), 0.3), box(1, (0.2, 0.1, 0.1), (0.4, 0, 0.05), -1.0,
                                                                     description="book", role="secondary_bg")])
    assert apply_pose_vector(s, to_pose_vector(s)) == s
    x = to_pose_vector(s)
    x[[0, 3]] += 0.1
    moved = apply_pose_vector(s, x)
    for a, b in zip(s.objects, moved.objects):
        assert b.position[0] == pytest.approx(a.position[0] + 0.1)
        assert (a.size, a.description, a.asset_id, a.role, a.yaw) == (b.size, b.description, b.asset_id, b.role, b.yaw)


def test_wrong_length_pose_vector():
    s = make_scene([box(0, (0.1,) * 3, (0, 0, 0.05))])
    with pytest.raises(LengthMismatch):
        apply_pose_vector(s, np.zeros(5))
    with pytest.raises(LengthMismatch):
        split_pose_vector(np.zeros(6))


def test_wrap_angle_range_and_identity():
    a = np.linspace(-20, 20, 2001)
    w = wrap_angle(a)
    assert np.all(w > -math.pi) and np.all(w <= math.pi)
    np.testing.assert_allclose(np.cos(w), np.cos(a), atol=1e-12)
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(0.3) == 0.3


def test_category_token():
    assert category_token("a small red Mug") == "mug"
    assert category_token("the apple") == "apple"


finite = st.floats(-2, 2, allow_nan=False)
positive = st.floats(0.01, 0.5)


@st.composite
def scenes(draw):
    n = draw(st.integers(0, 6))
    objs = []
    for i in range(n):
        objs.append({"id": i * 3, "description": draw(st.sampled_from(["mug", "red apple", "book", "fork"])),
                     "asset_id": "", "size": [draw(positive) for _ in range(3)],
                     "position": [draw(finite) for _ in range(3)], "yaw": draw(st.floats(-10, 10)),
                     "role": draw(st.sampled_from(["task", "important_bg", "secondary_bg"]))})
    return make_scene(objs, TableSpec(draw(positive) + 0.5, draw(positive) + 0.3), draw(st.text(max_size=20)))


@settings(max_examples=100, deadline=None)
@given(scenes())
def test_roundtrip_property(s):
    assert parse_layout(serialize_layout(s)) == s


@settings(max_examples=100, deadline=None)
@given(scenes(), st.floats(-1, 1))
def test_apply_never_touches_attributes(s, d):
    x = to_pose_vector(s) + d
    out = apply_pose_vector(s, x)
    for a, b in zip(s.objects, out.objects):
        assert (a.id, a.size, a.description, a.asset_id, a.role, a.extra) == \
               (b.id, b.size, b.description, b.asset_id, b.role, b.extra)
    np.testing.assert_allclose(out.positions(), s.positions() + d)
