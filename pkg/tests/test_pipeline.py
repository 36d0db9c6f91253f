import threading
import time

import pytest
import torch

from tabletop.assets import build_catalog
from tabletop.corrector.flow import FlowCorrector, VelocityField
from tabletop.corrector.optim import optimize_poses
from tabletop.errors import DiffConflict, DslParseError
from tabletop.layout import TableSpec, serialize_layout
from tabletop.metrics import object_collision
from tabletop.physics import SceneInstance
from tabletop.pipeline import (StageSchedule, WorkerConfig, edit_scene, empty_layout, run_dual_system,
                               serial_pipeline)
from tabletop.reasoner.mock import MockReasoner

CATALOG = build_catalog()
TABLE = TableSpec(1.0, 0.6)
TASKS = ["place an apple left_of a banana", "put the mug on_top_of the plate", "put a fork inside the tray",
         "place a can near the bottle", "place a book", "set the bowl behind the laptop",
         "put the apple inside the bowl and place a mug right_of the bowl", "place a keyboard in_front_of the laptop"]


@pytest.fixture(scope="module")
def flow_corrector(library):
    torch.manual_seed(0)
    model = VelocityField(32)
    torch.nn.init.normal_(model.out.weight, std=0.05)
    return FlowCorrector(model, library)


def optim_corrector(library):
    def run(scene):
        return optimize_poses(SceneInstance.build(scene, library), budget=2000)[0]
    return run


def test_schedule_validation():
    assert StageSchedule().stages == ("t", "B", "b")
    for bad in ([], ["t", "t"], ["x"]):
        with pytest.raises(ValueError):
            StageSchedule(bad)
    with pytest.raises(ValueError):
        WorkerConfig(0, 1)


@pytest.mark.parametrize("M", [1, 4, 16])
def test_dual_equals_serial(M, flow_corrector):
    reasoner = MockReasoner(CATALOG, seed=1)
    batch = [(TASKS[k % len(TASKS)], TABLE) for k in range(M)]
    dual = run_dual_system(batch, reasoner=reasoner, corrector=flow_corrector, workers=WorkerConfig(4, 2))
    for (instr, table), out in zip(batch, dual):
        ref = serial_pipeline(instr, table, reasoner=reasoner, corrector=flow_corrector)
        assert serialize_layout(out) == serialize_layout(ref)


def test_identity_corrector_gives_raw_merge():
    reasoner = MockReasoner(CATALOG)
    out = serial_pipeline(TASKS[0], TABLE, reasoner=reasoner)
    roles = [o.role for o in out.objects]
    assert roles == sorted(roles, key=["task", "important_bg", "secondary_bg"].index)
    assert len(out.objects) == 2 + reasoner.n_important + reasoner.n_distractors


def test_task_only_schedule(flow_corrector):
    out = serial_pipeline(TASKS[1], TABLE, StageSchedule(["t"]), MockReasoner(CATALOG), flow_corrector)
    assert {o.role for o in out.objects} == {"task"} and len(out.objects) == 2


def test_corrector_runs_after_every_stage():
    seen = []

    def spy(scene):
        seen.append(len(scene.objects))
        return scene
    serial_pipeline(TASKS[0], TABLE, reasoner=MockReasoner(CATALOG, n_important=1, n_distractors=0), corrector=spy)
    # the empty distractor stage still passes through the corrector
    assert seen == [2, 3, 3]


def test_corrected_layout_feeds_next_stage():
    contexts = []

    class Recorder(MockReasoner):
        def propose(self, req):
            contexts.append(req.context)
            return super().propose(req)

    def lift(scene):
        return scene.with_objects([o.with_pose((o.position[0], o.position[1], 1.0), o.yaw) for o in scene.objects])
    serial_pipeline(TASKS[0], TABLE, reasoner=Recorder(CATALOG), corrector=lift)
    assert all(o.position[2] == 1.0 for o in contexts[1].objects)


def test_failures_are_isolated(flow_corrector):
    reasoner = MockReasoner(CATALOG)
    batch = [(TASKS[0], TABLE), ("juggle three apples", TABLE), (TASKS[1], TABLE)]
    failures = []
    out = run_dual_system(batch, reasoner=reasoner, corrector=flow_corrector, failures=failures)
    assert out[1] is None and out[0] is not None and out[2] is not None
    assert len(failures) == 1 and failures[0].index == 1 and failures[0].phase == "reason"
    assert isinstance(failures[0].error, DslParseError)

    def flaky(scene):
        if any(o.category == "mug" for o in scene.objects):
            raise RuntimeError("corrector down")
        return scene
    failures = []
    out = run_dual_system(batch[:1] + batch[2:], reasoner=reasoner, corrector=flaky, failures=failures)
    assert out[0] is not None and out[1] is None and failures[0].phase == "correct"
    with pytest.raises(ValueError):
        run_dual_system([], reasoner=reasoner)


def test_pipelining_overlaps_work():
    # a slow corrector should not stall the reasoner on other scenes
    active = {"sr": 0, "pc": 0}
    overlap = []
    lock = threading.Lock()

    class Slow(MockReasoner):
        def propose(self, req):
            with lock:
                active["sr"] += 1
                overlap.append(active["pc"] > 0)
            time.sleep(0.01)
            with lock:
                active["sr"] -= 1
            return super().propose(req)

    def slow_pc(scene):
        with lock:
            active["pc"] += 1
        time.sleep(0.03)
        with lock:
            active["pc"] -= 1
        return scene
    run_dual_system([(TASKS[k], TABLE) for k in range(6)], reasoner=Slow(CATALOG), corrector=slow_pc,
                    workers=WorkerConfig(2, 1))
    assert any(overlap)


def test_edit_scene(library):
    reasoner = MockReasoner(CATALOG, n_important=0, n_distractors=0)
    scene = serial_pipeline("place an apple left_of a banana and place a plate", TABLE, reasoner=reasoner)
    out = edit_scene(scene, "remove the banana", reasoner)
    assert "banana" not in [o.category for o in out.objects]
    assert [(o.id, o.description) for o in out.objects] == [(o.id, o.description) for o in scene.objects
                                                            if o.category != "banana"]
    corr = optim_corrector(library)
    out = edit_scene(corr(scene), "add a fork near the plate", reasoner, corr)
    assert len(out.objects) == 4 and out.objects[-1].category == "fork"
    assert object_collision(SceneInstance.build(out, library)) == 0
    with pytest.raises(DiffConflict):
        edit_scene(empty_layout("", TABLE), "remove the banana", reasoner)
