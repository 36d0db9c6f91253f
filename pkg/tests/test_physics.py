import numpy as np
import pytest

from tabletop.layout import TableSpec, to_pose_vector
from tabletop.physics import (TABLE, PhysicsWeights, SceneInstance, batch_physics, colliding_pairs,
                              detect_supports, dist_sdf, loss_obj_obj, loss_obj_table, loss_support,
                              support_gaps, total_physics_loss)

from conftest import box, instance, scene_of

BIG = TableSpec(4.0, 4.0)
UNIT = (1.0, 1.0, 1.0)


def cubes(lib, dx, size=UNIT):
    h = size[2] / 2
    return instance(lib, box(0, size, (0, 0, h)), box(1, size, (dx, 0, h)), table=BIG)


def test_dist_sdf_penetrating_and_apart(dense_library):
    inst = cubes(dense_library, 0.5)
    cell = inst.geometries[0].grid.cell_size
    assert dist_sdf(inst, 0, 1) == pytest.approx(-0.5, abs=2 * cell)
    assert dist_sdf(cubes(dense_library, 2.0), 0, 1) == pytest.approx(1.0, abs=2 * cell)
    assert dist_sdf(cubes(dense_library, 1.0), 0, 1) == pytest.approx(0.0, abs=2 * cell)


def test_obj_obj_loss(dense_library):
    far = cubes(dense_library, 2.0)
    v, g = loss_obj_obj(far)
    assert v == 0 and not g.any()
    v, g = loss_obj_obj(cubes(dense_library, 0.5))
    # symmetrized: both directions contribute ~0.25
    assert v == pytest.approx(0.5, rel=0.1)
    # 0.2 overlap along x: pushing the cubes apart lowers the loss
    _, g = loss_obj_obj(cubes(dense_library, 0.8))
    assert g[0] > 0 and g[3] < 0


def test_obj_table_loss(dense_library):
    rest = instance(dense_library, box(0, (0.2,) * 3, (0, 0, 0.1)))
    assert loss_obj_table(rest)[0] == pytest.approx(0.0, abs=1e-12)
    sunk = instance(dense_library, box(0, (0.2,) * 3, (0, 0, 0.0)))
    v, g = loss_obj_table(sunk)
    assert v == pytest.approx(0.01, rel=1e-6)
    assert g[2] < 0  # descent direction is +z


def test_supports(library):
    lone = instance(library, box(0, (0.1,) * 3, (0, 0, 0.05)))
    assert detect_supports(lone, 0) == [TABLE]
    stack = instance(library, box(0, (0.2, 0.16, 0.1), (0, 0, 0.05), asset="box_large"),
                     box(1, (0.08,) * 3, (0.02, 0, 0.14)), box(2, (0.08,) * 3, (0.4, 0, 0.04)))
    assert detect_supports(stack, 1) == [TABLE, 0]
    assert detect_supports(stack, 2) == [TABLE]
    gaps, sups = support_gaps(stack)
    assert sups[1] == 0 and gaps[1] == pytest.approx(0.0, abs=1e-6)
    assert sups[0] == TABLE and gaps[0] == pytest.approx(0.0, abs=1e-12)


def test_floating_gap_and_support_loss(library):
    inst = instance(library, box(0, (0.1,) * 3, (0, 0, 0.15)))
    gaps, sups = support_gaps(inst)
    assert gaps[0] == pytest.approx(0.1, abs=1e-9) and sups == [TABLE]
    v, g = loss_support(inst, PhysicsWeights(epsilon_sup=0.002))
    assert v == pytest.approx(0.009604, rel=1e-6)
    assert g[2] > 0
    ok = instance(library, box(0, (0.1,) * 3, (0, 0, 0.0501)))
    assert loss_support(ok, PhysicsWeights(epsilon_sup=0.002))[0] == 0


def test_total_is_weighted_sum(library):
    inst = instance(library, box(0, (0.1,) * 3, (0, 0, 0.03)), box(1, (0.1,) * 3, (0.05, 0.02, 0.2), 0.3))
    w = PhysicsWeights(0.7, 0.3, 0.001)
    total, g = total_physics_loss(inst, w)
    a, ga = loss_obj_obj(inst)
    b, gb = loss_obj_table(inst)
    c, gc = loss_support(inst, w)
    assert total == pytest.approx(0.7 * (a + b) + 0.3 * c, rel=1e-12)
    np.testing.assert_allclose(g, 0.7 * (ga + gb) + 0.3 * gc, rtol=1e-12)
    assert total_physics_loss(inst, PhysicsWeights(0, 0, 0.001))[0] == 0


def test_valid_scene_zero_loss(library):
    inst = instance(library, box(0, (0.1,) * 3, (0, 0, 0.05)), box(1, (0.1,) * 3, (0.3, 0, 0.05), 0.4))
    assert total_physics_loss(inst)[0] == 0
    assert colliding_pairs(inst) == []


def _random_scene(lib, rng, n, table=None):
    objs = []
    for i in range(n):
        s = rng.uniform(0.05, 0.15, 3)
        objs.append(box(i, s, (*rng.uniform(-0.15, 0.15, 2), s[2] / 2 + rng.uniform(-0.02, 0.04)),
                        rng.uniform(-3, 3)))
    return instance(lib, *objs, table=table)


def test_translation_equivariance(library):
    rng = np.random.default_rng(5)
    for _ in range(5):
        inst = _random_scene(library, rng, 4, table=BIG)
        x = to_pose_vector(inst.scene)
        y = x.copy()
        y[0:12:3] += 0.0625
        y[1:12:3] -= 0.125
        t0 = batch_physics([inst], [x])[0]
        t1 = batch_physics([inst], [y])[0]
        for k in ("obj_obj", "obj_table", "support"):
            assert getattr(t1, k) == pytest.approx(getattr(t0, k), rel=1e-9, abs=1e-15)


def test_gradient_finite_differences(library):
    rng = np.random.default_rng(6)
    checked = 0
    for _ in range(8):
        inst = _random_scene(library, rng, 3)
        x = to_pose_vector(inst.scene)
        val, g = total_physics_loss(inst, x=x)
        if val == 0:
            continue
        h = 1e-7
        fd = np.array([(total_physics_loss(inst, x=x + h * e)[0] - total_physics_loss(inst, x=x - h * e)[0]) / (2 * h)
                       for e in np.eye(len(x))])
        # kinks (support switches, argmin changes) show up as FD mismatch; skip those scenes
        if np.linalg.norm(fd - g) / np.linalg.norm(fd) > 1e-3:
            continue
        checked += 1
    assert checked >= 3


def test_small_step_never_increases(library):
    rng = np.random.default_rng(7)
    for _ in range(10):
        inst = _random_scene(library, rng, 4)
        x = to_pose_vector(inst.scene)
        val, g = total_physics_loss(inst, x=x)
        if val == 0:
            continue
        step = 1.0
        while total_physics_loss(inst, x=x - step * g)[0] > val - 1e-4 * step * g @ g and step > 1e-12:
            step /= 2
        assert total_physics_loss(inst, x=x - step * g)[0] <= val


def test_batch_matches_single(library):
    rng = np.random.default_rng(8)
    insts = [_random_scene(library, rng, n) for n in (2, 3, 5)]
    batch = batch_physics(insts)
    for inst, t in zip(insts, batch):
        single = batch_physics([inst])[0]
        assert t.total == pytest.approx(single.total, rel=1e-12, abs=1e-18)
        np.testing.assert_allclose(t.grad, single.grad, rtol=1e-10, atol=1e-15)
