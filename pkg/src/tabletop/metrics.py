"""Evaluation metrics: collision ratio, floating rate, task/scene-graph
alignment and the rearrangement distances."""

from __future__ import annotations

import logging
import math
import weakref
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .assets import vertical_cavity_depth
from .errors import CategoryMismatch, EmptyGroundTruth
from .layout import LayoutScene, split_pose_vector, wrap_angle
from .physics import (TABLE, SceneInstance, batch_pair_distances, collision_matrix, batch_support_gaps, dist_sdf,
                      pair_distances, support_gaps)
from .sdf import to_object_frame, to_world_frame

log = logging.getLogger(__name__)

FLOAT_THRESHOLD = 0.0005  # 0.05 cm
DIRECTION_MARGIN = 0.02
NEAR_DISTANCE = 0.05
INSIDE_FRACTION = 0.8
ROTATION_WEIGHT = 0.1  # meters per radian in emd_to_gt

PREDICATES = ("on_top_of", "inside", "left_of", "right_of", "in_front_of", "behind", "near")
_INVERSE = {"right_of": "left_of", "behind": "in_front_of"}


# ---------------------------------------------------------------------------
# physical validity

def collision_count(inst: SceneInstance, x=None) -> int:
    D = pair_distances(inst, x)
    return int(np.triu(collision_matrix(D), k=1).sum())


def _oc_from_matrix(D: np.ndarray) -> float:
    n = D.shape[0]
    if n < 2:
        return 0.0
    hits = np.triu(collision_matrix(D), k=1).sum()
    return float(hits) / math.comb(n, 2)


def object_collision(inst: SceneInstance, x=None) -> float:
    """Colliding unordered pairs over ``C(N, 2)``; a pair collides when the
    sampled penetration is deeper than the contact tolerance (1 µm) in
    either direction. 0 if N < 2."""
    return _oc_from_matrix(pair_distances(inst, x))


def batch_object_collision(instances: Sequence[SceneInstance], xs=None) -> np.ndarray:
    return np.array([_oc_from_matrix(D) for D in batch_pair_distances(instances, xs)])


def float_rate(inst: SceneInstance, x=None, threshold: float = FLOAT_THRESHOLD) -> float:
    """Fraction of objects whose support gap exceeds ``threshold``."""
    if inst.n == 0:
        return 0.0
    gap, _ = support_gaps(inst, x)
    return float(np.mean(gap > threshold))


def batch_float_rate(instances: Sequence[SceneInstance], xs=None, threshold: float = FLOAT_THRESHOLD) -> np.ndarray:
    return np.array([float(np.mean(g > threshold)) if len(g) else 0.0
                     for g, _ in batch_support_gaps(instances, xs)])


def dataset_float_rate(instances: Sequence[SceneInstance], threshold: float = FLOAT_THRESHOLD) -> float:
    """Per-scene floating rates averaged over the set."""
    return float(np.mean(batch_float_rate(instances, threshold=threshold))) if instances else 0.0


# ---------------------------------------------------------------------------
# semantic alignment

def align_with_task(pred_categories: Iterable[str], gt_categories: Iterable[str]) -> float:
    """``|pred ∩ gt| / |gt|`` with multiset intersection on category tokens."""
    gt = Counter(gt_categories)
    if not gt:
        raise EmptyGroundTruth("ground truth has no task objects")
    inter = Counter(pred_categories) & gt
    return sum(inter.values()) / sum(gt.values())


@dataclass(frozen=True)
class Relation:
    subject: int
    predicate: str
    object: int
    subject_category: str
    object_category: str

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject_category, self.predicate, self.object_category)


@dataclass
class SceneGraph:
    relations: list[Relation] = field(default_factory=list)

    def keys(self) -> Counter:
        return Counter(r.key for r in self.relations)

    def __len__(self):
        return len(self.relations)


def _normalize(subj, pred, obj, cats) -> Relation:
    if pred in _INVERSE:
        subj, obj, pred = obj, subj, _INVERSE[pred]
    if pred == "near" and (cats[obj], obj) < (cats[subj], subj):
        subj, obj = obj, subj
    return Relation(subj, pred, obj, cats[subj], cats[obj])


_CAVITY: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _has_cavity(geo) -> bool:
    if geo not in _CAVITY:
        _CAVITY[geo] = vertical_cavity_depth(geo.mesh) > 0
    return _CAVITY[geo]


def _is_inside(inst: SceneInstance, i: int, c: int, x=None, eps: float = 2e-4) -> bool:
    geo_c = inst.geometries[c]
    if not _has_cavity(geo_c):
        return False
    pos, yaw = inst.scene.positions(), inst.scene.yaws()
    if x is not None:
        pos, yaw = split_pose_vector(x, inst.n)
    w = to_world_frame(inst.geometries[i].collision_points, pos[i], yaw[i])
    local = to_object_frame(w, pos[c], yaw[c])
    half = geo_c.half_extents
    in_band = np.all(np.abs(local) <= half + 1e-9, axis=1)
    if in_band.mean() < INSIDE_FRACTION:
        return False
    return float(geo_c.grid.query(local).min()) >= -eps


def extract_scene_graph(inst: SceneInstance, subset: Sequence[int] | None = None, x=None) -> SceneGraph:
    """Spatial relations among ``subset`` (object indices; default all).

    * ``inside(a, c)``: ``c`` has a cavity, at least 80% of ``a``'s collision
      points lie in ``c``'s bounding box (its interior band) and none
      penetrate ``c`` deeper than 0.2 mm;
    * ``on_top_of(a, s)``: the support-gap procedure picks ``s`` as ``a``'s
      support (and ``a`` is not inside ``s``);
    * directional: center offsets, the dominant horizontal axis must exceed
      the other by 2 cm; left/right on x, in_front_of means smaller y;
    * ``near``: surface distance under 5 cm and no other predicate.
    Relations are normalized so only ``left_of`` / ``in_front_of`` appear.
    """
    idx = list(range(inst.n)) if subset is None else list(subset)
    cats = {i: inst.scene.objects[i].category for i in range(inst.n)}
    gaps, sups = support_gaps(inst, x)
    pos = inst.scene.positions() if x is None else np.asarray(x)[: 3 * inst.n].reshape(-1, 3)
    rels: list[Relation] = []
    related = set()
    members = set(idx)
    for a in idx:
        for c in idx:
            if a != c and _is_inside(inst, a, c, x):
                rels.append(_normalize(a, "inside", c, cats))
                related.add(frozenset((a, c)))
    for a in idx:
        s = sups[a]
        if s != TABLE and s in members and frozenset((a, s)) not in related:
            rels.append(_normalize(a, "on_top_of", s, cats))
            related.add(frozenset((a, s)))
    for k, a in enumerate(idx):
        for b in idx[k + 1:]:
            if frozenset((a, b)) in related:
                continue
            dx, dy = pos[b, 0] - pos[a, 0], pos[b, 1] - pos[a, 1]
            if abs(dx) >= abs(dy) + DIRECTION_MARGIN:
                rels.append(_normalize(a, "left_of" if dx > 0 else "right_of", b, cats))
            elif abs(dy) >= abs(dx) + DIRECTION_MARGIN:
                rels.append(_normalize(a, "in_front_of" if dy > 0 else "behind", b, cats))
            else:
                d = min(dist_sdf(inst, a, b, x), dist_sdf(inst, b, a, x))
                if d < NEAR_DISTANCE:
                    rels.append(_normalize(a, "near", b, cats))
    return SceneGraph(rels)


def align_with_scene_graph(pred: SceneGraph, gt: SceneGraph) -> float:
    """``|S_pred ∩ S_gt| / |S_gt|`` on (category, predicate, category) keys
    (multiset intersection)."""
    g = gt.keys()
    if not g:
        raise EmptyGroundTruth("ground-truth scene graph is empty")
    return sum((pred.keys() & g).values()) / sum(g.values())


def task_indices(scene: LayoutScene) -> list[int]:
    return [k for k, o in enumerate(scene.objects) if o.role == "task"]


# ---------------------------------------------------------------------------
# rearrangement

def _match(a: LayoutScene, b: LayoutScene, cost_fn) -> tuple[np.ndarray, list[tuple[int, int]]]:
    ca = Counter(o.category for o in a.objects)
    cb = Counter(o.category for o in b.objects)
    if ca != cb:
        raise CategoryMismatch(f"category multisets differ: {dict(ca)} vs {dict(cb)}")
    costs, pairs = [], []
    for cat in sorted(ca):
        ia = [k for k, o in enumerate(a.objects) if o.category == cat]
        ib = [k for k, o in enumerate(b.objects) if o.category == cat]
        C = np.array([[cost_fn(a.objects[i], b.objects[j]) for j in ib] for i in ia])
        r, c = linear_sum_assignment(C)
        costs.extend(C[r, c])
        pairs.extend((ia[i], ib[j]) for i, j in zip(r, c))
    return np.asarray(costs), pairs


def _translation_cost(o1, o2) -> float:
    return float(np.linalg.norm(np.subtract(o1.position, o2.position)))


def distance_moved(before: LayoutScene, after: LayoutScene) -> float:
    """Mean translation of objects, matched one-to-one within each category
    by minimum total Euclidean distance."""
    if len(before.objects) == 0:
        return 0.0
    costs, _ = _match(before, after, _translation_cost)
    return float(costs.mean())


def emd_to_gt(pred: LayoutScene, gt: LayoutScene, rotation_weight: float = ROTATION_WEIGHT) -> float:
    """Mean optimal transport cost between predicted and ground-truth objects
    with pair cost ``|dp| + w_r * |wrap(dr)|`` (matching within category)."""
    if len(gt.objects) == 0:
        return 0.0

    def cost(o1, o2):
        return _translation_cost(o1, o2) + rotation_weight * abs(wrap_angle(o1.yaw - o2.yaw))

    costs, _ = _match(pred, gt, cost)
    return float(costs.mean())


def mean_over_scenes(fn, firsts: Sequence[LayoutScene], seconds: Sequence[LayoutScene]) -> float:
    return float(np.mean([fn(a, b) for a, b in zip(firsts, seconds)]))


# ---------------------------------------------------------------------------
# report

@dataclass
class MetricsReport:
    oc: float
    float_rate: float
    awt: float | None = None
    aws: float | None = None
    per_scene: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"oc": self.oc, "float": self.float_rate, "awt": self.awt, "aws": self.aws,
                "per_scene": self.per_scene}


def evaluate(preds: Sequence[SceneInstance], gts: Sequence[SceneInstance] | None = None) -> MetricsReport:
    """Dataset-level report. AwT/AwS need ground truth with task objects."""
    oc = batch_object_collision(preds)
    fl = batch_float_rate(preds)
    rows = [{"oc": float(a), "float": float(b)} for a, b in zip(oc, fl)]
    awt = aws = None
    if gts is not None:
        awts, awss = [], []
        for row, p, g in zip(rows, preds, gts):
            gt_task = task_indices(g.scene)
            if not gt_task:
                continue
            pt = task_indices(p.scene)
            row["awt"] = align_with_task([p.scene.objects[k].category for k in pt],
                                         [g.scene.objects[k].category for k in gt_task])
            awts.append(row["awt"])
            gg = extract_scene_graph(g, gt_task)
            if len(gg):
                row["aws"] = align_with_scene_graph(extract_scene_graph(p, pt), gg)
                awss.append(row["aws"])
        awt = float(np.mean(awts)) if awts else None
        aws = float(np.mean(awss)) if awss else None
    return MetricsReport(float(np.mean(oc)) if len(oc) else 0.0, float(np.mean(fl)) if len(fl) else 0.0,
                         awt, aws, rows)
