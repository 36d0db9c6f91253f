"""Mesh-level physical penalties on object poses.

Three terms, each with an analytic gradient w.r.t. the pose vector:

* object-object penetration ``sum_{i<j} [max(0, -d(i,j))]^2 + [max(0, -d(j,i))]^2``
  where ``d(i, m) = min_{q in Q_i} D_m(q)`` over the collision points of ``i``;
* object-table penetration ``sum_i [max(0, -d(i, table))]^2``;
* support contact ``sum_i [max(0, gap_i - eps)]^2`` with
  ``gap_i = min_{s in S_i} min_{b in B_i} |D_s(b)|``.

Everything is evaluated in batches: many scenes, many directed pairs, one
vectorized SDF lookup per distinct grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import sdf as sdfmod
from .assets import Catalog, Mesh, bottom_band, build_catalog, geometry_embedding, sample_surface_points
from .errors import AssetMissing
from .layout import LayoutScene, TableSpec, split_pose_vector, to_pose_vector

log = logging.getLogger(__name__)

TABLE = "table"

N_COLLISION_POINTS = 512
N_CLOUD_POINTS = 4096
N_BOTTOM_POINTS = 128
CONTACT_TOLERANCE = 1e-6  # penetration shallower than this is contact, not collision


@dataclass(frozen=True)
class PhysicsWeights:
    lambda_sdf: float = 0.02
    lambda_sup: float = 0.01
    epsilon_sup: float = 2e-4

    def __post_init__(self):
        if min(self.lambda_sdf, self.lambda_sup, self.epsilon_sup) < 0:
            raise ValueError("physics weights must be non-negative")


@dataclass(frozen=True, eq=False)
class ObjectGeometry:
    """Everything the physics and the corrector need about one scaled asset."""

    gid: int
    asset_id: str
    size: tuple[float, float, float]
    mesh: Mesh
    grid: sdfmod.SdfGrid
    collision_points: np.ndarray  # (Q, 3) object frame
    bottom_points: np.ndarray  # (K, 3) object frame, padded by repetition
    embedding: np.ndarray  # (64,)

    @property
    def half_extents(self) -> np.ndarray:
        return np.asarray(self.size) / 2

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.size)) / 2

    @property
    def margin(self) -> float:
        return float(np.linalg.norm(self.grid.spacing))


class GeometryLibrary:
    """Resolves ``(asset_id, size)`` to :class:`ObjectGeometry`, memoized.

    Grids can optionally be cached on disk in ``cache_dir``.
    """

    def __init__(self, catalog: Catalog | None = None, resolution: int = sdfmod.DEFAULT_RESOLUTION,
                 n_collision: int = N_COLLISION_POINTS, n_cloud: int = N_CLOUD_POINTS,
                 n_bottom: int = N_BOTTOM_POINTS, seed: int = 0, cache_dir: str | Path | None = None):
        self.catalog = catalog if catalog is not None else build_catalog()
        self.resolution = resolution
        self.n_collision = n_collision
        self.n_cloud = n_cloud
        self.n_bottom = n_bottom
        self.seed = seed
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._by_key: dict[tuple, ObjectGeometry] = {}
        self.geoms: list[ObjectGeometry] = []
        self._stack_cache = None

    def key(self, asset_id: str, size) -> tuple:
        return (asset_id, tuple(round(float(v), 9) for v in size))

    def resolve(self, asset_id: str, size) -> ObjectGeometry:
        k = self.key(asset_id, size)
        hit = self._by_key.get(k)
        if hit is not None:
            return hit
        if asset_id not in self.catalog:
            raise AssetMissing(f"asset {asset_id!r} is not in the catalog")
        size = k[1]
        mesh = self.catalog.mesh(asset_id, size)
        grid = self._grid(asset_id, size, mesh)
        cloud = sample_surface_points(mesh, self.n_cloud, seed=self.seed)
        q = sample_surface_points(mesh, self.n_collision, seed=self.seed + 1)
        band = bottom_band(cloud)
        rng = np.random.default_rng(self.seed + 2)
        if len(band) >= self.n_bottom:
            b = band[np.sort(rng.choice(len(band), self.n_bottom, replace=False))]
        else:
            b = np.concatenate([band, band[np.zeros(self.n_bottom - len(band), dtype=int)]])
        emb = geometry_embedding(cloud, mesh, self.catalog)
        geo = ObjectGeometry(len(self.geoms), asset_id, size, mesh, grid, q, b, emb)
        self.geoms.append(geo)
        self._by_key[k] = geo
        self._stack_cache = None
        return geo

    def _grid(self, asset_id, size, mesh) -> sdfmod.SdfGrid:
        path = None
        if self.cache_dir is not None:
            path = self.cache_dir / f"{sdfmod.cache_key(asset_id, size, self.resolution)}.sdf"
            if path.exists():
                return sdfmod.load_grid(path)
        grid = sdfmod.build_sdf_grid(mesh, self.resolution)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            sdfmod.save_grid(grid, path)
            grid = sdfmod.load_grid(path)  # same float32 rounding whether cached or not
        return grid

    def stacks(self):
        """Stacked per-geometry point sets, rebuilt when geometries are added."""
        if self._stack_cache is None:
            self._stack_cache = (
                np.stack([g.collision_points for g in self.geoms]),
                np.stack([g.bottom_points for g in self.geoms]),
                np.array([g.radius for g in self.geoms]),
                np.array([g.margin for g in self.geoms]),
                np.stack([g.half_extents for g in self.geoms]),
            )
        return self._stack_cache


@dataclass(frozen=True, eq=False)
class SceneInstance:
    """A layout with every object resolved to geometry."""

    scene: LayoutScene
    geometries: tuple[ObjectGeometry, ...]
    library: GeometryLibrary = field(repr=False)

    @classmethod
    def build(cls, scene: LayoutScene, library: GeometryLibrary) -> "SceneInstance":
        geos = []
        for o in scene.objects:
            aid = o.asset_id
            if not aid:
                from .assets import retrieve_asset
                aid = retrieve_asset(o.size, o.description, library.catalog)
            geos.append(library.resolve(aid, o.size))
        return cls(scene, tuple(geos), library)

    @property
    def n(self) -> int:
        return len(self.geometries)

    @property
    def table(self) -> TableSpec:
        return self.scene.table

    @property
    def gids(self) -> np.ndarray:
        return np.array([g.gid for g in self.geometries], dtype=np.int64)

    def pose(self, x=None) -> np.ndarray:
        return to_pose_vector(self.scene) if x is None else np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# rigid-transform helpers (vectorized over leading axes)

def _rot(points, yaw):
    """Rotate points (..., 3) about z; ``yaw`` broadcasts against ``points[..., 0]``."""
    c, s = np.cos(yaw), np.sin(yaw)
    x, y = points[..., 0], points[..., 1]
    return np.stack([c * x - s * y, s * x + c * y, points[..., 2]], axis=-1)


def _rot_inv(points, yaw):
    return _rot(points, -yaw)


def _query_grouped(lib: GeometryLibrary, gids: np.ndarray, local: np.ndarray, grad: bool = False):
    """Evaluate geometry ``gids[k]``'s SDF at ``local[k]`` (shape (M, P, 3))."""
    vals = np.empty(local.shape[:-1])
    grads = np.empty(local.shape) if grad else None
    for g in np.unique(gids):
        sel = np.nonzero(gids == g)[0]
        v, gr = sdfmod.trilinear(lib.geoms[g].grid, local[sel], grad=grad)
        vals[sel] = v
        if grad:
            grads[sel] = gr
    return vals, grads


def _table_sdf(points, table: TableSpec, grad=False):
    v = sdfmod.analytic_box_sdf(points, table.half_extents, table.slab_center)
    if not grad:
        return v, None
    return v, sdfmod.analytic_box_sdf_grad(points, table.half_extents, table.slab_center)


# ---------------------------------------------------------------------------
# batched core


@dataclass
class _Flat:
    """Objects of a batch of scenes flattened into global arrays."""

    lib: GeometryLibrary
    scene_of: np.ndarray  # (M,)
    local_index: np.ndarray  # (M,)
    offsets: np.ndarray  # (S+1,)
    gids: np.ndarray  # (M,)
    pos: np.ndarray  # (M, 3)
    yaw: np.ndarray  # (M,)
    tables: list

    @classmethod
    def build(cls, instances: Sequence[SceneInstance], xs) -> "_Flat":
        lib = instances[0].library
        counts = np.array([inst.n for inst in instances], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        pos, yaw = [], []
        for inst, x in zip(instances, xs):
            p, r = split_pose_vector(inst.pose(x), inst.n)
            pos.append(p)
            yaw.append(r)
        scene_of = np.repeat(np.arange(len(instances)), counts)
        local = np.arange(offsets[-1]) - offsets[scene_of]
        gids = np.concatenate([inst.gids for inst in instances]) if offsets[-1] else np.zeros(0, np.int64)
        return cls(lib, scene_of, local, offsets,
                   gids, np.concatenate(pos) if pos else np.zeros((0, 3)),
                   np.concatenate(yaw) if yaw else np.zeros(0),
                   [inst.table for inst in instances])

    def scatter_grad(self, gp: np.ndarray, gr: np.ndarray) -> list[np.ndarray]:
        out = []
        for s in range(len(self.offsets) - 1):
            a, b = self.offsets[s], self.offsets[s + 1]
            out.append(np.concatenate([gp[a:b].ravel(), gr[a:b]]))
        return out


def _pair_candidates(flat: _Flat, broad: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """All ordered pairs (i, j), i != j, in the same scene; optionally pruned by
    a conservative bounding-sphere test (pruned pairs cannot penetrate)."""
    src, dst = [], []
    _, _, radius, margin, _ = flat.lib.stacks()
    for s in range(len(flat.offsets) - 1):
        a, b = flat.offsets[s], flat.offsets[s + 1]
        if b - a < 2:
            continue
        idx = np.arange(a, b)
        I, J = np.meshgrid(idx, idx, indexing="ij")
        m = I != J
        I, J = I[m], J[m]
        if broad:
            d = np.linalg.norm(flat.pos[I] - flat.pos[J], axis=1)
            keep = d < radius[flat.gids[I]] + radius[flat.gids[J]] + margin[flat.gids[J]]
            I, J = I[keep], J[keep]
        src.append(I)
        dst.append(J)
    if not src:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(src), np.concatenate(dst)


def _directed_pair_min(flat: _Flat, src, dst, want_grad=True):
    """``d(i, j) = min_q D_j(q)`` over collision points of ``i``; returns
    ``(d, dd/dpose_i (P,4), dd/dpose_j (P,4))`` with pose order (x, y, z, yaw)."""
    Q = flat.lib.stacks()[0]
    if len(src) == 0:
        z = np.zeros((0, 4))
        return np.zeros(0), z, z
    q = Q[flat.gids[src]]  # (P, n, 3)
    w = _rot(q, flat.yaw[src][:, None]) + flat.pos[src][:, None, :]
    local = _rot_inv(w - flat.pos[dst][:, None, :], flat.yaw[dst][:, None])
    vals, _ = _query_grouped(flat.lib, flat.gids[dst], local)
    k = np.argmin(vals, axis=1)
    d = vals[np.arange(len(src)), k]
    if not want_grad:
        return d, None, None
    q_star = q[np.arange(len(src)), k]
    w_star = w[np.arange(len(src)), k]
    l_star = local[np.arange(len(src)), k]
    _, g_local = _query_grouped(flat.lib, flat.gids[dst], l_star[:, None, :], grad=True)
    gw = _rot(g_local[:, 0, :], flat.yaw[dst])  # world-frame gradient
    rq = _rot(q_star, flat.yaw[src])  # R_i q
    ez_cross_rq = np.stack([-rq[:, 1], rq[:, 0], np.zeros(len(src))], axis=1)
    rel = w_star - flat.pos[dst]
    ez_cross_rel = np.stack([-rel[:, 1], rel[:, 0], np.zeros(len(src))], axis=1)
    g_src = np.concatenate([gw, (gw * ez_cross_rq).sum(1, keepdims=True)], axis=1)
    g_dst = np.concatenate([-gw, -(gw * ez_cross_rel).sum(1, keepdims=True)], axis=1)
    return d, g_src, g_dst


def _table_min(flat: _Flat, objs, want_grad=True):
    """``d(i, table)`` for global object indices ``objs``."""
    Q = flat.lib.stacks()[0]
    if len(objs) == 0:
        return np.zeros(0), np.zeros((0, 4))
    q = Q[flat.gids[objs]]
    w = _rot(q, flat.yaw[objs][:, None]) + flat.pos[objs][:, None, :]
    d = np.empty(len(objs))
    g = np.zeros((len(objs), 4))
    for s in np.unique(flat.scene_of[objs]):
        sel = np.nonzero(flat.scene_of[objs] == s)[0]
        v, _ = _table_sdf(w[sel], flat.tables[s])
        k = np.argmin(v, axis=1)
        d[sel] = v[np.arange(len(sel)), k]
        if want_grad:
            ws = w[sel, k]
            _, gw = _table_sdf(ws, flat.tables[s], grad=True)
            rq = _rot(q[sel, k], flat.yaw[objs[sel]])
            g[sel, :3] = gw
            g[sel, 3] = -gw[:, 0] * rq[:, 1] + gw[:, 1] * rq[:, 0]
    return d, g


def _support_candidates(flat: _Flat, tol: float = 1e-3):
    """Object supports (i, s): horizontal footprint AABBs overlap and the
    bottom of ``s`` lies below the bottom of ``i``. The table is implicit."""
    he = flat.lib.stacks()[4][flat.gids]
    c, s_ = np.abs(np.cos(flat.yaw)), np.abs(np.sin(flat.yaw))
    fx = c * he[:, 0] + s_ * he[:, 1]
    fy = s_ * he[:, 0] + c * he[:, 1]
    bottom = flat.pos[:, 2] - he[:, 2]
    src, dst = [], []
    for s in range(len(flat.offsets) - 1):
        a, b = flat.offsets[s], flat.offsets[s + 1]
        if b - a < 2:
            continue
        idx = np.arange(a, b)
        I, J = np.meshgrid(idx, idx, indexing="ij")
        I, J = I.ravel(), J.ravel()
        ok = (I != J)
        ok &= np.abs(flat.pos[I, 0] - flat.pos[J, 0]) < fx[I] + fx[J]
        ok &= np.abs(flat.pos[I, 1] - flat.pos[J, 1]) < fy[I] + fy[J]
        ok &= bottom[J] < bottom[I] - tol
        src.append(I[ok])
        dst.append(J[ok])
    if not src:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(src), np.concatenate(dst)


def _support_all(flat: _Flat, want_grad=True):
    """Per object: (gap, support global index or -1 for table, dgap/dpose_i,
    dgap/dpose_s)."""
    B = flat.lib.stacks()[1]
    M = len(flat.gids)
    b = B[flat.gids]  # (M, K, 3)
    wb = _rot(b, flat.yaw[:, None]) + flat.pos[:, None, :]
    # table candidate
    gap = np.empty(M)
    arg = np.zeros(M, dtype=np.int64)
    tv = np.empty((M, b.shape[1]))
    for s in range(len(flat.offsets) - 1):
        a, e = flat.offsets[s], flat.offsets[s + 1]
        tv[a:e] = _table_sdf(wb[a:e], flat.tables[s])[0]
    at = np.abs(tv)
    arg[:] = np.argmin(at, axis=1)
    gap[:] = at[np.arange(M), arg]
    sup = np.full(M, -1, dtype=np.int64)
    src, dst = _support_candidates(flat)
    if len(src):
        local = _rot_inv(wb[src] - flat.pos[dst][:, None, :], flat.yaw[dst][:, None])
        vals, _ = _query_grouped(flat.lib, flat.gids[dst], local)
        av = np.abs(vals)
        k = np.argmin(av, axis=1)
        dk = av[np.arange(len(src)), k]
        # ordered scan keeps the first (table, then lowest index) on ties
        for p in range(len(src)):
            i = src[p]
            if dk[p] < gap[i]:
                gap[i] = dk[p]
                sup[i] = dst[p]
                arg[i] = k[p]
    if not want_grad:
        return gap, sup, None, None
    g_i = np.zeros((M, 4))
    g_s = np.zeros((M, 4))
    bi = b[np.arange(M), arg]
    wbi = wb[np.arange(M), arg]
    rq = _rot(bi, flat.yaw)
    ez_rq = np.stack([-rq[:, 1], rq[:, 0], np.zeros(M)], axis=1)
    on_table = sup < 0
    for s in range(len(flat.offsets) - 1):
        a, e = flat.offsets[s], flat.offsets[s + 1]
        sel = np.arange(a, e)[on_table[a:e]]
        if len(sel):
            v, gw = _table_sdf(wbi[sel], flat.tables[s], grad=True)
            gw = gw * np.sign(v)[:, None]
            g_i[sel, :3] = gw
            g_i[sel, 3] = (gw * ez_rq[sel]).sum(1)
    sel = np.nonzero(~on_table)[0]
    if len(sel):
        j = sup[sel]
        loc = _rot_inv(wbi[sel] - flat.pos[j], flat.yaw[j])
        v, gl = _query_grouped(flat.lib, flat.gids[j], loc[:, None, :], grad=True)
        gw = _rot(gl[:, 0, :], flat.yaw[j]) * np.sign(v[:, 0])[:, None]
        rel = wbi[sel] - flat.pos[j]
        ez_rel = np.stack([-rel[:, 1], rel[:, 0], np.zeros(len(sel))], axis=1)
        g_i[sel, :3] = gw
        g_i[sel, 3] = (gw * ez_rq[sel]).sum(1)
        g_s[sel, :3] = -gw
        g_s[sel, 3] = -(gw * ez_rel).sum(1)
    return gap, sup, g_i, g_s


@dataclass
class PhysicsTerms:
    obj_obj: float
    obj_table: float
    support: float
    total: float
    grad_obj_obj: np.ndarray
    grad_obj_table: np.ndarray
    grad_support: np.ndarray
    grad: np.ndarray


def batch_physics(instances: Sequence[SceneInstance], xs=None, weights: PhysicsWeights = PhysicsWeights(),
                  terms=("obj_obj", "obj_table", "support"), want_grad: bool = True) -> list[PhysicsTerms]:
    """Physics losses and pose gradients for many scenes at once.

    ``xs`` optionally overrides the scenes' poses (one pose vector per scene).
    Terms not listed in ``terms`` are reported as zero.
    """
    if xs is None:
        xs = [None] * len(instances)
    flat = _Flat.build(instances, xs)
    S = len(instances)
    M = len(flat.gids)
    vals = {t: np.zeros(S) for t in ("obj_obj", "obj_table", "support")}
    grads = {t: (np.zeros((M, 4))) for t in vals}

    if "obj_obj" in terms and M:
        src, dst = _pair_candidates(flat)
        d, gs, gd = _directed_pair_min(flat, src, dst, want_grad)
        h = np.maximum(0.0, -d)
        np.add.at(vals["obj_obj"], flat.scene_of[src], h ** 2)
        if want_grad:
            coef = (-2.0 * h)[:, None]
            np.add.at(grads["obj_obj"], src, coef * gs)
            np.add.at(grads["obj_obj"], dst, coef * gd)
    if "obj_table" in terms and M:
        objs = np.arange(M)
        d, g = _table_min(flat, objs, want_grad)
        h = np.maximum(0.0, -d)
        np.add.at(vals["obj_table"], flat.scene_of, h ** 2)
        if want_grad:
            grads["obj_table"] += (-2.0 * h)[:, None] * g
    if "support" in terms and M:
        gap, sup, gi, gsup = _support_all(flat, want_grad)
        h = np.maximum(0.0, gap - weights.epsilon_sup)
        np.add.at(vals["support"], flat.scene_of, h ** 2)
        if want_grad:
            coef = (2.0 * h)[:, None]
            grads["support"] += coef * gi
            has = sup >= 0
            np.add.at(grads["support"], sup[has], coef[has] * gsup[has])

    out = []
    per = {t: flat.scatter_grad(grads[t][:, :3], grads[t][:, 3]) for t in grads} if want_grad else None
    for s in range(S):
        oo, ot, su = vals["obj_obj"][s], vals["obj_table"][s], vals["support"][s]
        total = weights.lambda_sdf * (oo + ot) + weights.lambda_sup * su
        if want_grad:
            go, gt, gsu = per["obj_obj"][s], per["obj_table"][s], per["support"][s]
            g = weights.lambda_sdf * (go + gt) + weights.lambda_sup * gsu
        else:
            go = gt = gsu = g = None
        out.append(PhysicsTerms(float(oo), float(ot), float(su), float(total), go, gt, gsu, g))
    return out


# ---------------------------------------------------------------------------
# single-scene API


def dist_sdf(inst: SceneInstance, i: int, m, x=None) -> float:
    """Signed penetration distance from object ``i`` into ``m`` (an object
    index or :data:`TABLE`): min SDF of ``m`` over ``i``'s collision points."""
    flat = _Flat.build([inst], [x])
    if m == TABLE:
        return float(_table_min(flat, np.array([i]), want_grad=False)[0][0])
    if m == i:
        raise ValueError("dist_sdf needs two different objects")
    d, _, _ = _directed_pair_min(flat, np.array([i]), np.array([m]), want_grad=False)
    return float(d[0])


def pair_distances(inst: SceneInstance, x=None) -> np.ndarray:
    """(N, N) matrix of ``dist_sdf(i, j)``; pairs that cannot touch (bounding
    spheres apart) are reported as ``+inf``; diagonal is ``+inf``."""
    return batch_pair_distances([inst], [x])[0]


def batch_pair_distances(instances, xs=None) -> list[np.ndarray]:
    xs = [None] * len(instances) if xs is None else xs
    flat = _Flat.build(instances, xs)
    src, dst = _pair_candidates(flat)
    d, _, _ = _directed_pair_min(flat, src, dst, want_grad=False)
    out = [np.full((inst.n, inst.n), np.inf) for inst in instances]
    for k in range(len(src)):
        s = flat.scene_of[src[k]]
        out[s][flat.local_index[src[k]], flat.local_index[dst[k]]] = d[k]
    return out


def collision_matrix(D: np.ndarray, tol: float = CONTACT_TOLERANCE) -> np.ndarray:
    """Symmetric boolean matrix: pair penetrates deeper than ``tol`` in
    either direction."""
    return (D < -tol) | (D.T < -tol)


def colliding_pairs(inst: SceneInstance, x=None) -> list[tuple[int, int]]:
    """Unordered pairs ``i < j`` penetrating beyond the contact tolerance
    in either direction."""
    D = pair_distances(inst, x)
    n = inst.n
    C = collision_matrix(D)
    return [(i, j) for i in range(n) for j in range(i + 1, n) if C[i, j]]


def loss_obj_obj(inst: SceneInstance, x=None) -> tuple[float, np.ndarray]:
    t = batch_physics([inst], [x], PhysicsWeights(1.0, 0.0), terms=("obj_obj",))[0]
    return t.obj_obj, t.grad_obj_obj


def loss_obj_table(inst: SceneInstance, x=None) -> tuple[float, np.ndarray]:
    t = batch_physics([inst], [x], PhysicsWeights(1.0, 0.0), terms=("obj_table",))[0]
    return t.obj_table, t.grad_obj_table


def loss_support(inst: SceneInstance, weights: PhysicsWeights = PhysicsWeights(), x=None) -> tuple[float, np.ndarray]:
    t = batch_physics([inst], [x], weights, terms=("support",))[0]
    return t.support, t.grad_support


def total_physics_loss(inst: SceneInstance, weights: PhysicsWeights = PhysicsWeights(), x=None) -> tuple[float, np.ndarray]:
    t = batch_physics([inst], [x], weights)[0]
    return t.total, t.grad


def detect_supports(inst: SceneInstance, i: int, x=None) -> list:
    """Candidate supports of object ``i``: the table plus every object whose
    horizontal footprint overlaps ``i``'s and whose bottom is lower."""
    flat = _Flat.build([inst], [x])
    src, dst = _support_candidates(flat)
    return [TABLE] + sorted(int(flat.local_index[d]) for s, d in zip(src, dst) if s == i)


def support_gaps(inst: SceneInstance, x=None) -> tuple[np.ndarray, list]:
    """Gap and chosen support for every object of a scene."""
    flat = _Flat.build([inst], [x])
    gap, sup, _, _ = _support_all(flat, want_grad=False)
    return gap, [TABLE if s < 0 else int(flat.local_index[s]) for s in sup]


def batch_support_gaps(instances, xs=None) -> list[tuple[np.ndarray, list]]:
    xs = [None] * len(instances) if xs is None else xs
    flat = _Flat.build(instances, xs)
    gap, sup, _, _ = _support_all(flat, want_grad=False)
    out = []
    for s in range(len(instances)):
        a, b = flat.offsets[s], flat.offsets[s + 1]
        out.append((gap[a:b], [TABLE if k < 0 else int(flat.local_index[k]) for k in sup[a:b]]))
    return out


def support_gap(inst: SceneInstance, i: int, x=None) -> tuple[float, object]:
    """``(gap, support)`` for object ``i``; support is :data:`TABLE` or an object index."""
    gap, sup = support_gaps(inst, x)
    return float(gap[i]), sup[i]
