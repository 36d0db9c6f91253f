"""Dual-system scene synthesis: a semantic reasoner expands the layout stage
by stage and a physics corrector repairs it after every expansion.

``run_dual_system`` interleaves many scenes through two bounded worker
pools (reasoner and corrector) so one scene can be corrected while others
are being expanded. Each scene's result depends only on its own inputs, so
the output equals ``serial_pipeline`` applied scene by scene.
"""

from __future__ import annotations

import logging
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .assets import Catalog, build_catalog
from .layout import LayoutScene, TableSpec
from .reasoner.base import STAGES, Reasoner, StageRequest, apply_diff, merge_proposal, propose_stage

log = logging.getLogger(__name__)

Corrector = Callable[[LayoutScene], LayoutScene]

SR, PC, DONE = "SR", "PC", "done"


def identity_corrector(scene: LayoutScene) -> LayoutScene:
    return scene


@dataclass(frozen=True)
class StageSchedule:
    stages: tuple[str, ...] = STAGES

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("stage schedule must not be empty")
        if len(set(self.stages)) != len(self.stages):
            raise ValueError(f"stage schedule has repeats: {self.stages}")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ValueError(f"unknown stages {unknown}; expected a subset of {STAGES}")

    def __len__(self):
        return len(self.stages)


@dataclass
class SceneState:
    """Scheduler-side bookkeeping for one scene. ``kappa`` is the 1-based
    index of the next stage to expand; ``len(schedule) + 1`` means done."""

    m: int
    layout: LayoutScene
    kappa: int = 1
    location: str = SR


@dataclass(frozen=True)
class SceneFailure:
    index: int
    stage: str
    phase: str  # "reason" or "correct"
    error: BaseException


@dataclass(frozen=True)
class WorkerConfig:
    reasoner_workers: int = 4
    corrector_workers: int = 1

    def __post_init__(self):
        if self.reasoner_workers < 1 or self.corrector_workers < 1:
            raise ValueError("worker pools need at least one worker each")


def empty_layout(instruction: str, table: TableSpec) -> LayoutScene:
    return LayoutScene(table, (), instruction)


def expand(layout: LayoutScene, stage: str, reasoner: Reasoner, catalog: Catalog) -> LayoutScene:
    """One reasoner step: propose the stage's objects in the context of the
    current layout and merge them."""
    req = StageRequest(layout.instruction, layout.table, layout, stage)
    return merge_proposal(req, propose_stage(req, reasoner), catalog)


def _correct(layout: LayoutScene, corrector: Corrector) -> LayoutScene:
    return corrector(layout) if len(layout) else layout


def serial_pipeline(instruction: str, table: TableSpec, schedule: StageSchedule | None = None,
                    reasoner: Reasoner | None = None, corrector: Corrector = identity_corrector,
                    catalog: Catalog | None = None) -> LayoutScene:
    """Strict alternation: expand a stage, correct, feed the corrected layout
    back as context for the next stage."""
    if reasoner is None:
        raise ValueError("a reasoner is required")
    schedule = schedule or StageSchedule()
    catalog = catalog or getattr(reasoner, "catalog", None) or build_catalog()
    layout = empty_layout(instruction, table)
    for stage in schedule.stages:
        layout = _correct(expand(layout, stage, reasoner, catalog), corrector)
    return layout


def run_dual_system(batch: Sequence[tuple[str, TableSpec]], schedule: StageSchedule | None = None,
                    reasoner: Reasoner | None = None, corrector: Corrector = identity_corrector,
                    workers: WorkerConfig | None = None, catalog: Catalog | None = None,
                    failures: list | None = None) -> list[LayoutScene | None]:
    """Run every (instruction, table) pair through the schedule with the
    reasoner and corrector working on different scenes at the same time.

    Returns layouts in input order. A scene whose reasoner or corrector call
    raises is dropped (``None`` in the output) and recorded in ``failures``;
    the other scenes continue.
    """
    if not batch:
        raise ValueError("batch must not be empty")
    if reasoner is None:
        raise ValueError("a reasoner is required")
    schedule = schedule or StageSchedule()
    workers = workers or WorkerConfig()
    catalog = catalog or getattr(reasoner, "catalog", None) or build_catalog()
    K = len(schedule)

    states = [SceneState(m, empty_layout(instr, table)) for m, (instr, table) in enumerate(batch)]
    q_sr = [s.m for s in states]
    q_pc: list[int] = []
    running: dict[Future, tuple[int, str]] = {}
    busy = {SR: 0, PC: 0}
    cap = {SR: workers.reasoner_workers, PC: workers.corrector_workers}
    results: list[LayoutScene | None] = [None] * len(states)

    def fail(st: SceneState, phase: str, exc: BaseException):
        stage = schedule.stages[st.kappa - 1]
        log.warning("scene %d failed during %s of stage %s: %s", st.m, phase, stage, exc)
        st.location = DONE
        if failures is not None:
            failures.append(SceneFailure(st.m, stage, phase, exc))

    with ThreadPoolExecutor(cap[SR], thread_name_prefix="reasoner") as sr_pool, \
            ThreadPoolExecutor(cap[PC], thread_name_prefix="corrector") as pc_pool:
        while q_sr or q_pc or running:
            # dispatch while pool capacity allows; FIFO within each queue
            while q_sr and busy[SR] < cap[SR]:
                st = states[q_sr.pop(0)]
                fut = sr_pool.submit(expand, st.layout, schedule.stages[st.kappa - 1], reasoner, catalog)
                running[fut] = (st.m, SR)
                busy[SR] += 1
            while q_pc and busy[PC] < cap[PC]:
                st = states[q_pc.pop(0)]
                fut = pc_pool.submit(_correct, st.layout, corrector)
                running[fut] = (st.m, PC)
                busy[PC] += 1
            done, _ = wait(list(running), return_when=FIRST_COMPLETED)
            # apply results in submission-independent order so bookkeeping is reproducible
            for fut in sorted(done, key=lambda f: running[f]):
                m, where = running.pop(fut)
                busy[where] -= 1
                st = states[m]
                exc = fut.exception()
                if exc is not None:
                    fail(st, "reason" if where == SR else "correct", exc)
                    continue
                st.layout = fut.result()
                if where == SR:
                    st.location = PC
                    q_pc.append(m)
                else:
                    st.kappa += 1
                    if st.kappa > K:
                        st.location = DONE
                        results[m] = st.layout
                    else:
                        st.location = SR
                        q_sr.append(m)
    return results


def edit_scene(scene: LayoutScene, instruction: str, reasoner: Reasoner, corrector: Corrector = identity_corrector,
               catalog: Catalog | None = None) -> LayoutScene:
    """Ask the reasoner for an object-level diff, apply it, re-correct.
    Objects the edit does not touch keep their ids."""
    catalog = catalog or getattr(reasoner, "catalog", None) or build_catalog()
    diff = reasoner.propose_edit(scene, instruction)
    return _correct(apply_diff(scene, diff, catalog), corrector)
