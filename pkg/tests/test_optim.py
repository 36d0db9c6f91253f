import itertools

import numpy as np
import pytest

from tabletop.corrector.optim import bucket_of, collision_bucket, optimize_many, optimize_poses
from tabletop.layout import to_pose_vector
from tabletop.metrics import float_rate, object_collision, support_gaps
from tabletop.physics import PhysicsWeights, SceneInstance

from conftest import box, instance, scene_of

CUBE = (0.1, 0.1, 0.1)


def test_floating_cube_converges(library):
    inst = instance(library, box(0, CUBE, (0, 0, .15)))
    scene, rep = optimize_poses(inst)
    assert rep.success and rep.iterations < 500
    gap, _ = support_gaps(SceneInstance.build(scene, library))
    assert gap[0] <= PhysicsWeights().epsilon_sup


def test_valid_scene_is_identity(library):
    inst = instance(library, box(0, CUBE, (0, 0, .05)), box(1, CUBE, (.3, 0, .05), 0.4))
    scene, rep = optimize_poses(inst)
    assert rep.iterations == 0 and rep.success
    assert scene is inst.scene


def _pile(n=10, spread=0.02, seed=0):
    rng = np.random.default_rng(seed)
    return [box(i, (.12, .12, .08), (*rng.normal(0, spread, 2), .04 + .005 * i), rng.uniform(-3, 3))
            for i in range(n)]


def test_jammed_pile_fails_with_trace(library):
    inst = instance(library, *_pile())
    _, rep = optimize_poses(inst, budget=20)
    assert 30 <= rep.initial_collisions <= 45
    assert not rep.success
    assert rep.iterations == 20 and len(rep.trace) == 21
    totals = [r["total"] for r in rep.trace]
    assert all(b <= a for a, b in zip(totals, totals[1:]))


def test_trace_monotone_on_random_scenes(library, rng):
    insts = [instance(library, *[box(i, (.1, .08, .06), (*rng.uniform(-.25, .25, 2), rng.uniform(.02, .06)),
                                     rng.uniform(-3, 3)) for i in range(5)]) for _ in range(4)]
    for _, rep in optimize_many(insts, budget=300):
        totals = [r["total"] for r in rep.trace]
        assert all(b <= a for a, b in zip(totals, totals[1:]))


def test_batch_matches_single(library, rng):
    insts = [instance(library, *[box(i, (.1, .08, .06), (*rng.uniform(-.2, .2, 2), .05), rng.uniform(-3, 3))
                                 for i in range(4)]) for _ in range(3)]
    batched = optimize_many(insts, budget=100)
    for inst, (scene, rep) in zip(insts, batched):
        s1, r1 = optimize_poses(inst, budget=100)
        assert r1.iterations == rep.iterations
        np.testing.assert_array_equal(to_pose_vector(s1), to_pose_vector(scene))


def _brute_count(lib, objs):
    # analytic box overlap on axis-aligned boxes
    n = 0
    for a, b in itertools.combinations(objs, 2):
        pa, pb = np.array(a["position"]), np.array(b["position"])
        half = (np.array(a["size"]) + np.array(b["size"])) / 2
        n += bool(np.all(np.abs(pa - pb) < half - 1e-3))
    return n


def test_buckets(library):
    assert collision_bucket(instance(library, box(0, CUBE, (0, 0, .05)))) == "0-10"
    # six stacked-in-place cubes: 15 pairs, all overlapping
    objs = [box(i, CUBE, (.01 * i, 0, .05)) for i in range(6)]
    assert _brute_count(library, objs) == 15
    assert collision_bucket(instance(library, *objs)) == "10-20"
    assert bucket_of(41) == "30-40"
    assert bucket_of(39) == "30-40" and bucket_of(10) == "10-20" and bucket_of(9) == "0-10"


def test_non_pose_fields_untouched(library):
    objs = [box(0, CUBE, (0, 0, .05), description="red box", role="secondary_bg"),
            box(1, CUBE, (.05, 0, .07), description="blue box")]
    inst = instance(library, *objs)
    scene, rep = optimize_poses(inst)
    assert rep.iterations > 0
    for a, b in zip(inst.scene.objects, scene.objects):
        assert (a.id, a.description, a.asset_id, a.size, a.role) == (b.id, b.description, b.asset_id, b.size, b.role)
    assert scene.table == inst.scene.table and scene.instruction == inst.scene.instruction


def test_idempotent_on_success(library):
    inst = instance(library, box(0, CUBE, (0, 0, .05)), box(1, CUBE, (.06, .02, .06), 0.3),
                    box(2, (.2, .05, .04), (-.02, .05, .03), -1.0))
    scene, rep = optimize_poses(inst)
    assert rep.success
    again, _ = optimize_poses(SceneInstance.build(scene, library))
    assert np.max(np.abs(to_pose_vector(again) - to_pose_vector(scene))) <= 1e-6


def test_success_matches_metrics(library, rng):
    insts = [instance(library, *[box(i, (.1, .08, .06), (*rng.uniform(-.25, .25, 2), rng.uniform(.02, .06)),
                                     rng.uniform(-3, 3)) for i in range(4)]) for _ in range(4)]
    for scene, rep in optimize_many(insts, budget=2000):
        final = SceneInstance.build(scene, library)
        assert rep.success == (object_collision(final) == 0 and float_rate(final) == 0)


def test_restarts_are_seeded(library):
    inst = instance(library, *_pile(6, 0.01, seed=3))
    a = optimize_poses(inst, budget=60, restarts=2, seed=5)
    b = optimize_poses(inst, budget=60, restarts=2, seed=5)
    np.testing.assert_array_equal(to_pose_vector(a[0]), to_pose_vector(b[0]))
    assert a[1].iterations <= 60


def test_budget_must_be_positive(library):
    with pytest.raises(ValueError):
        optimize_poses(instance(library, box(0, CUBE, (0, 0, .05))), budget=0)
