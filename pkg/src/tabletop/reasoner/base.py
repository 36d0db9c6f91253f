"""Shared reasoner types: stage requests, proposals, scene diffs and the
validation that turns raw drafts into layout objects."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol, Sequence

import numpy as np

from ..assets import Catalog, retrieve_asset
from ..errors import DiffConflict, EmptyProposal
from ..layout import STAGE_ROLES, LayoutScene, ObjectRecord, TableSpec, wrap_angle

log = logging.getLogger(__name__)

STAGES = ("t", "B", "b")
POSITION_MARGIN = 0.05


@dataclass(frozen=True)
class ObjectDraft:
    """An object as proposed, before validation."""

    description: str
    size: tuple
    position: tuple
    yaw: float = 0.0
    asset_id: str = ""
    extra: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ObjectDraft":
        known = {"description", "size", "position", "yaw", "asset_id"}
        return cls(str(d.get("description", "")), tuple(d.get("size", ())), tuple(d.get("position", ())),
                   d.get("yaw", 0.0), str(d.get("asset_id", "") or ""),
                   {k: v for k, v in d.items() if k not in known})

    def to_dict(self) -> dict:
        return {"description": self.description, "size": list(self.size), "position": list(self.position),
                "yaw": self.yaw}


@dataclass(frozen=True)
class StageRequest:
    instruction: str
    table: TableSpec
    context: LayoutScene
    stage: str

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")


@dataclass(frozen=True)
class StageProposal:
    new_objects: tuple[ObjectDraft, ...]
    raw: Any = None


@dataclass(frozen=True)
class SceneDiff:
    """Object-level edit: drafts to add, ids to remove, ids to re-describe."""

    add: tuple[ObjectDraft, ...] = ()
    remove: tuple[int, ...] = ()
    redescribe: Mapping[int, str] = field(default_factory=dict)
    raw: Any = None


class Reasoner(Protocol):
    def propose(self, req: StageRequest) -> StageProposal: ...

    def propose_edit(self, scene: LayoutScene, text: str) -> SceneDiff: ...


@dataclass
class Rejection:
    index: int
    reason: str


def validate_proposals(proposal: StageProposal, catalog: Catalog, table: TableSpec,
                       margin: float = POSITION_MARGIN, rejects: list | None = None,
                       start_id: int = 0, role: str = "task") -> list[ObjectRecord]:
    """Turn drafts into records: sizes clamped to the catalog bounds, assets
    resolved by retrieval, positions clipped to the table plus ``margin``,
    yaw wrapped. Drafts with missing or non-finite fields are dropped and
    described in ``rejects`` (if given)."""
    lo, hi = catalog.size_bounds
    out = []
    for k, d in enumerate(proposal.new_objects):
        try:
            size = np.asarray(d.size, dtype=float)
            pos = np.asarray(d.position, dtype=float)
            yaw = float(d.yaw)
        except (TypeError, ValueError):
            _reject(rejects, k, "size/position/yaw not numeric")
            continue
        if size.shape != (3,) or pos.shape != (3,):
            _reject(rejects, k, "size and position must have 3 components")
            continue
        if not (np.isfinite(size).all() and np.isfinite(pos).all() and math.isfinite(yaw)):
            _reject(rejects, k, "non-finite size, position or yaw")
            continue
        if not d.description.strip():
            _reject(rejects, k, "empty description")
            continue
        clamped = np.clip(size, lo, hi)
        if not np.array_equal(clamped, size):
            log.warning("object %d (%s): size %s clamped to %s", k, d.description, size.tolist(), clamped.tolist())
        lim = np.array([table.width / 2 + margin, table.depth / 2 + margin])
        xy = np.clip(pos[:2], -lim, lim)
        if not np.array_equal(xy, pos[:2]):
            log.warning("object %d (%s): position clipped to the table", k, d.description)
        aid = d.asset_id if d.asset_id in catalog else retrieve_asset(clamped, d.description, catalog)
        out.append(ObjectRecord(start_id + len(out), d.description, aid, tuple(clamped),
                                (float(xy[0]), float(xy[1]), float(pos[2])), wrap_angle(yaw), role, dict(d.extra)))
    return out


def _reject(rejects, k, reason):
    log.warning("proposal object %d rejected: %s", k, reason)
    if rejects is not None:
        rejects.append(Rejection(k, reason))


def merge_proposal(req: StageRequest, proposal: StageProposal, catalog: Catalog,
                   rejects: list | None = None) -> LayoutScene:
    """Context objects untouched, validated new objects appended with fresh
    ids and the stage's role."""
    new = validate_proposals(proposal, catalog, req.table, rejects=rejects, start_id=req.context.next_id(),
                             role=STAGE_ROLES[req.stage])
    return req.context.with_objects(req.context.objects + tuple(new))


def propose_stage(req: StageRequest, impl: Reasoner) -> StageProposal:
    """Run one stage; an empty task stage is an error, empty background
    stages are fine."""
    prop = impl.propose(req)
    if req.stage == "t" and not prop.new_objects:
        raise EmptyProposal("the task stage proposed no objects")
    return prop


def apply_diff(scene: LayoutScene, diff: SceneDiff, catalog: Catalog) -> LayoutScene:
    """Apply removals, re-descriptions and additions; untouched objects keep
    their ids and fields. Added objects are task objects."""
    ids = set(scene.ids)
    missing = [i for i in list(diff.remove) + list(diff.redescribe) if i not in ids]
    if missing:
        raise DiffConflict(f"edit refers to objects not in the scene: {sorted(missing)}")
    kept = []
    for o in scene.objects:
        if o.id in diff.remove:
            continue
        if o.id in diff.redescribe:
            desc = diff.redescribe[o.id]
            o = ObjectRecord(o.id, desc, retrieve_asset(o.size, desc, catalog), o.size, o.position, o.yaw,
                             o.role, dict(o.extra))
        kept.append(o)
    base = scene.with_objects(kept)
    new = validate_proposals(StageProposal(diff.add), catalog, scene.table, start_id=scene.next_id())
    return base.with_objects(base.objects + tuple(new))


def task_categories(objects: Sequence[ObjectRecord]) -> list[str]:
    return [o.category for o in objects if o.role == "task"]
