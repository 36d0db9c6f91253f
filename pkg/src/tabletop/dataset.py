"""Procedural synthetic scenes: valid ground truth, corrupted coarse
counterparts and the three-stage records used to train staged proposal."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .assets import CONTAINERS, FLAT_TOP, Catalog
from .errors import ConfigError, GenerationTimeout, NoTaskObjects
from .layout import (LayoutScene, ObjectRecord, TableSpec, parse_layout, scene_to_dict, serialize_layout,
                     wrap_angle)
from .metrics import batch_object_collision
from .corrector.optim import optimize_many
from .physics import GeometryLibrary, PhysicsWeights, SceneInstance

log = logging.getLogger(__name__)

CLEARANCE = 1e-4  # generated objects rest this far above their support
STAGE_THRESHOLD = 0.02
ADJECTIVES = ("red", "blue", "green", "white", "black", "small", "wooden", "ceramic", "yellow", "metal")


@dataclass(frozen=True)
class GeneratorConfig:
    n_objects: tuple[int, int] = (3, 8)
    n_task: tuple[int, int] = (1, 3)
    p_stack: float = 0.35
    p_contain: float = 0.35
    assets: tuple[str, ...] = ()  # empty = whole catalog
    edge_margin: float = 0.03
    spacing: float = 0.005
    cluster: float = 1.0  # probability a table object is placed next to an earlier one
    cluster_gap: tuple[float, float] = (0.002, 0.01)
    max_attempts: int = 50
    polish_budget: int = 400
    corruption_std: float = 0.1
    require_collision: float = 0.0  # chance the corruption is redrawn until the coarse scene collides
    max_corruptions: int = 30
    table: tuple[float, float, float] = (1.0, 0.6, 0.04)

    def __post_init__(self):
        lo, hi = self.n_objects
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad object count range {self.n_objects}")
        if not (0 <= self.p_stack <= 1 and 0 <= self.p_contain <= 1):
            raise ConfigError("probabilities must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("n_objects", "n_task", "assets", "table", "cluster_gap"):
            if k in known:
                known[k] = tuple(known[k])
        return cls(**known)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def digest(self) -> str:
        return hashlib.sha1(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# geometry helpers

def footprint_half(size, yaw) -> np.ndarray:
    """Half extents of the world-axis-aligned box around a yawed footprint."""
    c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
    return np.array([c * size[0] / 2 + s * size[1] / 2, s * size[0] / 2 + c * size[1] / 2])


def world_aabb(o: ObjectRecord) -> tuple[np.ndarray, np.ndarray]:
    h = np.concatenate([footprint_half(o.size, o.yaw), [o.size[2] / 2]])
    p = np.asarray(o.position)
    return p - h, p + h


def _aabb_overlap(a, b, inflate: float) -> bool:
    return bool(np.all(a[0] - inflate <= b[1]) and np.all(b[0] - inflate <= a[1]))


@dataclass
class _Slot:
    asset: str
    family: str
    size: tuple
    pos: np.ndarray
    yaw: float
    on: int | None = None  # index of supporting object
    occupied: bool = False  # something already rests on / in it


def _random_yaw(rng) -> float:
    return float(wrap_angle(rng.uniform(-math.pi, math.pi)))


def _sample_layout(cfg: GeneratorConfig, catalog: Catalog, table: TableSpec, rng) -> list[_Slot]:
    ids = list(cfg.assets) or sorted(catalog.entries)
    n = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    slots: list[_Slot] = []
    for _ in range(n):
        aid = ids[int(rng.integers(len(ids)))]
        e = catalog[aid]
        size = e.size
        yaw = _random_yaw(rng)
        placed = None
        roll = rng.random()
        hosts_c = [k for k, s in enumerate(slots) if s.family in CONTAINERS and not s.occupied and s.on is None]
        hosts_s = [k for k, s in enumerate(slots) if s.family in FLAT_TOP and not s.occupied and s.on is None]
        if roll < cfg.p_contain and hosts_c:
            k = hosts_c[int(rng.integers(len(hosts_c)))]
            placed = _inside(slots[k], k, aid, e.family, size, rng)
        elif roll < cfg.p_contain + cfg.p_stack and hosts_s:
            k = hosts_s[int(rng.integers(len(hosts_s)))]
            placed = _on_top(slots[k], k, aid, e.family, size, yaw, rng)
        if placed is None:
            placed = _on_table(slots, aid, e.family, size, yaw, cfg, table, rng)
        if placed is None:
            continue  # no room; the scene just gets fewer objects
        if placed.on is not None:
            slots[placed.on].occupied = True
        slots.append(placed)
    return slots


def _inside(host: _Slot, k: int, aid, family, size, rng) -> _Slot | None:
    floor, _ = {"tray": (0.2, 0.94), "bowl": (0.15, 0.47)}[host.family]
    wall = 0.06 if host.family == "tray" else 0.08
    yaw = host.yaw + (math.pi / 2 if rng.random() < 0.5 else 0.0)
    inner = np.asarray(host.size[:2]) / 2 * (1 - wall) - 0.005
    # footprint in the host frame
    rel = yaw - host.yaw
    fh = footprint_half(size, rel)
    room = inner - fh
    if np.any(room < 0) or size[2] > host.size[2] * 3:
        return None
    off = rng.uniform(-room, room) * (0.3 if host.family == "bowl" else 1.0)
    c, s = math.cos(host.yaw), math.sin(host.yaw)
    dx = np.array([c * off[0] - s * off[1], s * off[0] + c * off[1]])
    z = host.pos[2] - host.size[2] / 2 + floor * host.size[2] + size[2] / 2 + CLEARANCE
    pos = np.array([host.pos[0] + dx[0], host.pos[1] + dx[1], z])
    return _Slot(aid, family, size, pos, float(wrap_angle(yaw)), on=k)


def _on_top(host: _Slot, k: int, aid, family, size, yaw, rng) -> _Slot | None:
    fh = footprint_half(size, yaw)
    hh = footprint_half(host.size, host.yaw)
    if np.any(fh > hh * 1.05) or size[2] > 0.15:
        return None
    off = rng.uniform(-1, 1, 2) * np.maximum(hh - fh, 0) * 0.5
    z = host.pos[2] + host.size[2] / 2 + size[2] / 2 + CLEARANCE
    return _Slot(aid, family, size, np.array([host.pos[0] + off[0], host.pos[1] + off[1], z]), yaw, on=k)


def _on_table(slots, aid, family, size, yaw, cfg, table: TableSpec, rng, tries: int = 200) -> _Slot | None:
    fh = footprint_half(size, yaw)
    lim = np.array([table.width / 2, table.depth / 2]) - fh - cfg.edge_margin
    if np.any(lim <= 0):
        return None
    anchors = [s for s in slots if s.on is None]
    for _ in range(tries):
        if anchors and rng.random() < cfg.cluster:
            a = anchors[int(rng.integers(len(anchors)))]
            ah = footprint_half(a.size, a.yaw)
            ang = rng.uniform(-math.pi, math.pi)
            d = np.array([math.cos(ang), math.sin(ang)])
            # distance along d at which the two footprint boxes just separate
            reach = min((fh[k] + ah[k]) / max(abs(d[k]), 1e-9) for k in range(2))
            xy = a.pos[:2] + d * (reach + rng.uniform(*cfg.cluster_gap))
            if np.any(np.abs(xy) > lim):
                continue
        else:
            xy = rng.uniform(-lim, lim)
        ok = True
        for s in slots:
            if s.on is not None:
                continue
            sh = footprint_half(s.size, s.yaw)
            if np.all(np.abs(xy - s.pos[:2]) < fh + sh + cfg.spacing):
                ok = False
                break
        if ok:
            pos = np.array([xy[0], xy[1], table.top_height + size[2] / 2 + CLEARANCE])
            return _Slot(aid, family, size, pos, yaw)
    return None


def _describe(aid: str, catalog: Catalog, rng) -> str:
    return f"{ADJECTIVES[int(rng.integers(len(ADJECTIVES)))]} {catalog[aid].category}"


# ---------------------------------------------------------------------------
# roles, instructions, stages

def assign_roles(objects: Sequence[ObjectRecord], n_task: int, threshold: float = STAGE_THRESHOLD) -> list[ObjectRecord]:
    """First ``n_task`` objects are task objects; every other object is
    important background if its AABB, inflated by ``threshold``, meets a task
    object's AABB, otherwise secondary background."""
    task = [world_aabb(o) for o in objects[:n_task]]
    out = []
    for k, o in enumerate(objects):
        if k < n_task:
            role = "task"
        else:
            box = world_aabb(o)
            role = "important_bg" if any(_aabb_overlap(box, t, threshold) for t in task) else "secondary_bg"
        out.append(ObjectRecord(o.id, o.description, o.asset_id, o.size, o.position, o.yaw, role, dict(o.extra)))
    return out


def describe_task(scene: LayoutScene, supports: dict[int, tuple[str, int]] | None = None) -> str:
    """A task sentence in the mock reasoner's grammar for the task objects.

    ``supports`` maps an object index to ``(relation, host index)``.
    """
    supports = supports or {}
    task = [k for k, o in enumerate(scene.objects) if o.role == "task"]
    clauses = []
    done = set()
    for k in task:
        if k in done:
            continue
        o = scene.objects[k]
        rel = supports.get(k)
        if rel is not None:
            r, h = rel
            clauses.append(f"put the {o.description} {r} the {scene.objects[h].description}")
            done.update((k, h))
            continue
        partner = next((j for j in task if j != k and j not in done and j not in supports), None)
        if partner is not None:
            p = scene.objects[partner]
            dx = p.position[0] - o.position[0]
            dy = p.position[1] - o.position[1]
            if abs(dx) >= abs(dy):
                r = "left_of" if dx > 0 else "right_of"
            else:
                r = "in_front_of" if dy > 0 else "behind"
            clauses.append(f"place the {o.description} {r} the {p.description}")
            done.update((k, partner))
        else:
            clauses.append(f"place the {o.description}")
            done.add(k)
    return " and ".join(clauses)


def serialize_stages(scene: LayoutScene, threshold: float = STAGE_THRESHOLD) -> list[dict]:
    """Three cumulative records (task, + important background, + the rest).

    Background objects are re-grouped here by the bounding-box rule, so the
    stored roles need only mark the task objects.
    """
    task = [o for o in scene.objects if o.role == "task"]
    if not task:
        raise NoTaskObjects("scene has no task objects")
    boxes = [world_aabb(o) for o in task]
    imp, sec = [], []
    for o in scene.objects:
        if o.role == "task":
            continue
        (imp if any(_aabb_overlap(world_aabb(o), b, threshold) for b in boxes) else sec).append(o)
    groups = [task, task + imp, task + imp + sec]
    records = []
    for k, objs in enumerate(groups, start=1):
        d = scene_to_dict(scene.with_objects(objs))
        d["stage"] = k
        records.append(d)
    return records


# ---------------------------------------------------------------------------
# generation

def generate_scene(config: GeneratorConfig, rng: np.random.Generator, library: GeometryLibrary,
                   weights: PhysicsWeights = PhysicsWeights()) -> LayoutScene:
    """Sample a layout, polish it with the pose optimizer and keep it only if
    it ends collision-free, non-floating and on the table."""
    table = TableSpec(*config.table)
    catalog = library.catalog
    for attempt in range(config.max_attempts):
        slots = _sample_layout(config, catalog, table, rng)
        if len(slots) < config.n_objects[0]:
            continue
        descs = [_describe(s.asset, catalog, rng) for s in slots]
        n_task = int(rng.integers(config.n_task[0], config.n_task[1] + 1))
        n_task = max(1, min(n_task, len(slots)))
        objs = [ObjectRecord(k, d, s.asset, tuple(s.size), tuple(float(v) for v in s.pos), s.yaw, "task")
                for k, (s, d) in enumerate(zip(slots, descs))]
        scene = LayoutScene(table, tuple(objs))
        inst = SceneInstance.build(scene, library)
        (polished, rep), = optimize_many([inst], weights, budget=config.polish_budget)
        if not rep.success or not _on_table_area(polished, table):
            log.debug("attempt %d rejected (success=%s)", attempt, rep.success)
            continue
        objs = assign_roles(polished.objects, n_task)
        supports = {k: ("inside" if slots[s.on].family in CONTAINERS else "on_top_of", s.on)
                    for k, s in enumerate(slots) if s.on is not None and k < n_task and s.on < n_task}
        scene = LayoutScene(table, tuple(objs))
        return LayoutScene(table, tuple(objs), describe_task(scene, supports))
    raise GenerationTimeout(f"no valid scene after {config.max_attempts} attempts")


def _on_table_area(scene: LayoutScene, table: TableSpec) -> bool:
    for o in scene.objects:
        lo, hi = world_aabb(o)
        if lo[0] < -table.width / 2 or hi[0] > table.width / 2 or lo[1] < -table.depth / 2 or hi[1] > table.depth / 2:
            return False
    return True


def corrupt_scene(scene: LayoutScene, std: float = 0.1, rng: np.random.Generator | None = None) -> LayoutScene:
    """Add Gaussian noise to every object's translation and yaw (nothing else)."""
    if std < 0:
        raise ValueError("noise std must be >= 0")
    if std == 0:
        return scene
    rng = rng if rng is not None else np.random.default_rng()
    objs = []
    for o in scene.objects:
        dp = rng.normal(0.0, std, 3)
        dr = rng.normal(0.0, std)
        objs.append(o.with_pose(tuple(float(v) for v in np.asarray(o.position) + dp), o.yaw + dr))
    return scene.with_objects(objs)


def scene_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, index, stream])


def generate_pair(index: int, seed: int, config: GeneratorConfig, library: GeometryLibrary) -> tuple[LayoutScene, LayoutScene]:
    gt = generate_scene(config, scene_rng(seed, index, 0), library)
    rng = scene_rng(seed, index, 1)
    coarse = corrupt_scene(gt, config.corruption_std, rng)
    if config.require_collision > 0 and rng.random() < config.require_collision:
        for _ in range(config.max_corruptions - 1):
            if batch_object_collision([SceneInstance.build(coarse, library)])[0] > 0:
                break
            coarse = corrupt_scene(gt, config.corruption_std, rng)
    return gt, coarse


def generate_pairs(n: int, seed: int, config: GeneratorConfig, library: GeometryLibrary,
                   start: int = 0) -> list[tuple[LayoutScene, LayoutScene]]:
    return [generate_pair(i, seed, config, library) for i in range(start, start + n)]


_WORKER_LIB: GeometryLibrary | None = None


def _worker(args):
    global _WORKER_LIB
    index, seed, cfg, cache_dir = args
    if _WORKER_LIB is None:
        _WORKER_LIB = GeometryLibrary(cache_dir=cache_dir)
    gt, coarse = generate_pair(index, seed, cfg, _WORKER_LIB)
    return serialize_layout(gt), serialize_layout(coarse)


@dataclass
class Manifest:
    n: int
    seed: int
    config: dict
    config_hash: str
    stats: dict = field(default_factory=dict)
    files: list[dict] = field(default_factory=list)


def make_dataset(n: int, config: GeneratorConfig, out: str | Path, seed: int = 0, jobs: int = 1,
                 library: GeometryLibrary | None = None) -> Manifest:
    """Write ``n`` (ground truth, coarse) pairs, their stage records and a
    manifest. Output depends only on ``(n, config, seed)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = Path(out)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "stages").mkdir(parents=True, exist_ok=True)
    library = library or GeometryLibrary(cache_dir=out / "sdf_cache")
    if jobs > 1:
        args = [(i, seed, config, str(library.cache_dir) if library.cache_dir else None) for i in range(n)]
        with ProcessPoolExecutor(jobs) as ex:
            texts = list(ex.map(_worker, args))
    else:
        texts = [tuple(serialize_layout(s) for s in generate_pair(i, seed, config, library)) for i in range(n)]
    files = []
    coarse_insts, counts = [], []
    for i, (gt_text, coarse_text) in enumerate(texts):
        gt_path = out / "scenes" / f"{i:04d}.gt.json"
        co_path = out / "scenes" / f"{i:04d}.coarse.json"
        gt_path.write_text(gt_text)
        co_path.write_text(coarse_text)
        gt = parse_layout(gt_text)
        for rec in serialize_stages(gt):
            (out / "stages" / f"{i:04d}.stage{rec['stage']}.json").write_text(json.dumps(rec, indent=2))
        files.append({"index": i, "gt": str(gt_path.relative_to(out)), "coarse": str(co_path.relative_to(out))})
        coarse_insts.append(SceneInstance.build(parse_layout(coarse_text), library))
        counts.append(len(gt.objects))
    oc = batch_object_collision(coarse_insts)
    stats = {"mean_objects": float(np.mean(counts)), "mean_initial_oc": float(np.mean(oc)),
             "frac_coarse_colliding": float(np.mean(oc > 0))}
    manifest = Manifest(n, seed, config.to_dict(), config.digest(), stats, files)
    (out / "manifest.json").write_text(json.dumps(asdict(manifest), indent=2))
    return manifest


def load_dataset(path: str | Path) -> tuple[Manifest, list[tuple[LayoutScene, LayoutScene]]]:
    path = Path(path)
    m = json.loads((path / "manifest.json").read_text())
    pairs = [(parse_layout((path / f["gt"]).read_text()), parse_layout((path / f["coarse"]).read_text()))
             for f in m["files"]]
    return Manifest(**m), pairs
