"""Voxel signed distance fields with trilinear value/gradient queries.

Sign convention: negative inside. Grids store values on nodes
``origin + k * spacing`` for ``k = 0 .. dims-1`` along each axis.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .assets import Mesh
from .errors import NonWatertight

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 64
DEFAULT_PADDING_FRACTION = 0.1  # per side, of the largest extent


@dataclass(frozen=True, eq=False)
class SdfGrid:
    origin: np.ndarray  # (3,)
    spacing: np.ndarray  # (3,) per-axis cell size
    values: np.ndarray  # (nx, ny, nz), negative inside
    padding: float = 0.0

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def cell_size(self) -> float:
        return float(self.spacing.max())

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.asarray(self.values.shape) - 1)

    def query(self, points) -> np.ndarray:
        """SDF at object-frame points (any leading shape, last axis 3)."""
        return trilinear(self, np.asarray(points, dtype=float))[0]

    def query_with_grad(self, points) -> tuple[np.ndarray, np.ndarray]:
        return trilinear(self, np.asarray(points, dtype=float), grad=True)


# ---------------------------------------------------------------------------
# geometry kernels

@numba.njit(cache=True)
def _point_triangle_dist2(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    # closest point on triangle (Ericson, Real-Time Collision Detection 5.1.5)
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        qx, qy, qz = ax + v * abx - px, ay + v * aby - py, az + v * abz - pz
        return qx * qx + qy * qy + qz * qz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        qx, qy, qz = ax + w * acx - px, ay + w * acy - py, az + w * acz - pz
        return qx * qx + qy * qy + qz * qz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx = bx + w * (cx - bx) - px
        qy = by + w * (cy - by) - py
        qz = bz + w * (cz - bz) - pz
        return qx * qx + qy * qy + qz * qz
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    qx = ax + abx * v + acx * w - px
    qy = ay + aby * v + acy * w - py
    qz = az + abz * v + acz * w - pz
    return qx * qx + qy * qy + qz * qz


@numba.njit(cache=True)
def _unsigned_distance(points, tris):
    n = points.shape[0]
    out = np.empty(n)
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = np.inf
        for t in range(tris.shape[0]):
            d = _point_triangle_dist2(px, py, pz,
                                      tris[t, 0, 0], tris[t, 0, 1], tris[t, 0, 2],
                                      tris[t, 1, 0], tris[t, 1, 1], tris[t, 1, 2],
                                      tris[t, 2, 0], tris[t, 2, 1], tris[t, 2, 2])
            if d < best:
                best = d
        out[i] = math.sqrt(best)
    return out


@numba.njit(cache=True)
def _ray_crossings(tris2d, wvals, u0, du, nu, v0, dv, nv, w0, dw, nw):
    """Per-node count of triangle crossings along the +w ray through each
    (u, v) lattice column; ``tris2d[t] = (u, v)`` vertex coords, ``wvals[t]``
    the triangle's w coords."""
    diff = np.zeros((nu, nv, nw + 1), dtype=np.int32)
    for t in range(tris2d.shape[0]):
        ua, va = tris2d[t, 0, 0], tris2d[t, 0, 1]
        ub, vb = tris2d[t, 1, 0], tris2d[t, 1, 1]
        uc, vc = tris2d[t, 2, 0], tris2d[t, 2, 1]
        det = (vb - vc) * (ua - uc) + (uc - ub) * (va - vc)
        if abs(det) < 1e-300:
            continue
        umin, umax = min(ua, ub, uc), max(ua, ub, uc)
        vmin, vmax = min(va, vb, vc), max(va, vb, vc)
        i0 = max(0, int(math.ceil((umin - u0) / du)))
        i1 = min(nu - 1, int(math.floor((umax - u0) / du)))
        j0 = max(0, int(math.ceil((vmin - v0) / dv)))
        j1 = min(nv - 1, int(math.floor((vmax - v0) / dv)))
        for i in range(i0, i1 + 1):
            pu = u0 + i * du
            for j in range(j0, j1 + 1):
                pv = v0 + j * dv
                l1 = ((vb - vc) * (pu - uc) + (uc - ub) * (pv - vc)) / det
                l2 = ((vc - va) * (pu - uc) + (ua - uc) * (pv - vc)) / det
                l3 = 1.0 - l1 - l2
                if l1 < 0.0 or l2 < 0.0 or l3 < 0.0:
                    continue
                wh = l1 * wvals[t, 0] + l2 * wvals[t, 1] + l3 * wvals[t, 2]
                # nodes k with w_k < wh see this crossing on their +w ray
                k = int(math.ceil((wh - w0) / dw))
                if k < 0:
                    k = 0
                if k > nw:
                    k = nw
                diff[i, j, k] += 1
    # count_k = sum_{m > k} diff[m]
    out = np.zeros((nu, nv, nw), dtype=np.int32)
    for i in range(nu):
        for j in range(nv):
            acc = 0
            for k in range(nw, 0, -1):
                acc += diff[i, j, k]
                out[i, j, k - 1] = acc
    return out


def _inside_votes(mesh: Mesh, origin, spacing, dims) -> np.ndarray:
    """Three-axis ray parity; returns an (nx, ny, nz, 3) bool array."""
    tv = mesh.triangle_vertices()
    votes = np.zeros(tuple(dims) + (3,), dtype=bool)
    # tiny irrational jitter keeps lattice rays off shared edges and vertices
    jitter = np.array([math.sqrt(2.0), math.sqrt(3.0), math.sqrt(5.0)]) * 1e-7 * spacing
    for w_axis in range(3):
        u_axis, v_axis = [a for a in range(3) if a != w_axis]
        t2 = np.ascontiguousarray(tv[:, :, [u_axis, v_axis]])
        wv = np.ascontiguousarray(tv[:, :, w_axis])
        o = origin + jitter
        cnt = _ray_crossings(t2, wv, o[u_axis], spacing[u_axis], dims[u_axis],
                             o[v_axis], spacing[v_axis], dims[v_axis],
                             origin[w_axis], spacing[w_axis], dims[w_axis])
        inside = (cnt % 2) == 1  # indexed (u, v, w)
        order = [u_axis, v_axis, w_axis]
        votes[..., w_axis] = np.transpose(inside, np.argsort(order))
    return votes


def build_sdf_grid(mesh: Mesh, resolution: int = DEFAULT_RESOLUTION, padding: float | None = None) -> SdfGrid:
    """Dense signed distance grid of a watertight mesh.

    ``resolution`` nodes per axis over the mesh AABB grown by ``padding``
    meters on every side (default: 10% of the largest extent).

    Raises:
        NonWatertight: more than 0.1% of nodes get a split inside/outside vote.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    lo, hi = mesh.bounds
    if padding is None:
        padding = DEFAULT_PADDING_FRACTION * float((hi - lo).max())
    origin = lo - padding
    upper = hi + padding
    dims = (resolution, resolution, resolution)
    spacing = (upper - origin) / (resolution - 1)
    axes = [origin[a] + spacing[a] * np.arange(dims[a]) for a in range(3)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dist = _unsigned_distance(np.ascontiguousarray(nodes), np.ascontiguousarray(mesh.triangle_vertices()))
    votes = _inside_votes(mesh, origin, spacing, dims)
    n_in = votes.sum(axis=-1)
    # nodes on the surface may vote either way; their sign does not matter
    on_surface = (dist <= 1e-9 * float(spacing.max())).reshape(dims)
    split = (n_in != 0) & (n_in != 3) & ~on_surface
    if split.mean() > 1e-3:
        raise NonWatertight(f"{split.mean():.2%} of SDF nodes have ambiguous sign votes")
    inside = (n_in >= 2).reshape(-1)
    values = np.where(inside, -dist, dist).reshape(dims)
    return SdfGrid(origin, spacing, values, float(padding))


# ---------------------------------------------------------------------------
# queries

def trilinear(grid: SdfGrid, p: np.ndarray, grad: bool = False):
    """Trilinear interpolation in object-frame coordinates.

    Outside the grid box the value is the interpolant at the clamped point
    plus the distance to the box (a conservative extension that is never
    negative when the boundary values are not).
    Returns ``(values, gradients or None)``.
    """
    shape = p.shape[:-1]
    p = p.reshape(-1, 3)
    dims = np.asarray(grid.values.shape)
    lo, hi = grid.origin, grid.upper
    pc = np.clip(p, lo, hi)
    off = p - pc
    outside = np.sqrt((off ** 2).sum(axis=1))
    f = (pc - lo) / grid.spacing
    i0 = np.clip(np.floor(f).astype(np.int64), 0, dims - 2)
    t = f - i0
    V = grid.values
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    c000 = V[x0, y0, z0]
    c100 = V[x0 + 1, y0, z0]
    c010 = V[x0, y0 + 1, z0]
    c110 = V[x0 + 1, y0 + 1, z0]
    c001 = V[x0, y0, z0 + 1]
    c101 = V[x0 + 1, y0, z0 + 1]
    c011 = V[x0, y0 + 1, z0 + 1]
    c111 = V[x0 + 1, y0 + 1, z0 + 1]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    c00 = c000 + (c100 - c000) * tx
    c10 = c010 + (c110 - c010) * tx
    c01 = c001 + (c101 - c001) * tx
    c11 = c011 + (c111 - c011) * tx
    c0 = c00 + (c10 - c00) * ty
    c1 = c01 + (c11 - c01) * ty
    val = c0 + (c1 - c0) * tz + outside
    if not grad:
        return val.reshape(shape), None
    dz = c1 - c0
    dy = (c10 - c00) * (1 - tz) + (c11 - c01) * tz
    dx = ((c100 - c000) * (1 - ty) + (c110 - c010) * ty) * (1 - tz) + \
         ((c101 - c001) * (1 - ty) + (c111 - c011) * ty) * tz
    g = np.stack([dx, dy, dz], axis=1) / grid.spacing
    # clamped axes: interpolant is constant along them; the distance term carries the slope
    clamped = off != 0
    g = np.where(clamped, 0.0, g)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = g + np.where(outside[:, None] > 0, off / np.where(outside > 0, outside, 1.0)[:, None], 0.0)
    return val.reshape(shape), g.reshape(shape + (3,))


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def to_object_frame(points_world, position, yaw) -> np.ndarray:
    """Inverse rigid transform: ``R(yaw)^T (p - position)``."""
    R = yaw_matrix(yaw)
    return (np.asarray(points_world, float) - np.asarray(position, float)) @ R


def to_world_frame(points_obj, position, yaw) -> np.ndarray:
    R = yaw_matrix(yaw)
    return np.asarray(points_obj, float) @ R.T + np.asarray(position, float)


def query_sdf(grid: SdfGrid, point_world, position=(0.0, 0.0, 0.0), yaw: float = 0.0):
    """SDF of an object posed at ``(position, yaw)`` evaluated at world points."""
    return grid.query(to_object_frame(point_world, position, yaw))


def query_sdf_gradient(grid: SdfGrid, point_world, position=(0.0, 0.0, 0.0), yaw: float = 0.0) -> np.ndarray:
    """World-frame gradient of the trilinear interpolant."""
    _, g = grid.query_with_grad(to_object_frame(point_world, position, yaw))
    return g @ yaw_matrix(yaw).T


def analytic_box_sdf(point, half_extents, center=(0.0, 0.0, 0.0)):
    """Exact signed distance to an axis-aligned box."""
    q = np.abs(np.asarray(point, float) - np.asarray(center, float)) - np.asarray(half_extents, float)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    out = outside + inside
    return float(out) if np.ndim(out) == 0 else out


def analytic_box_sdf_grad(point, half_extents, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    p = np.asarray(point, float) - np.asarray(center, float)
    h = np.asarray(half_extents, float)
    sgn = np.where(p >= 0, 1.0, -1.0)
    q = np.abs(p) - h
    qpos = np.maximum(q, 0.0)
    n = np.linalg.norm(qpos, axis=-1, keepdims=True)
    g_out = sgn * qpos / np.where(n > 0, n, 1.0)
    k = np.argmax(q, axis=-1)
    g_in = np.zeros_like(p)
    np.put_along_axis(g_in, k[..., None], np.take_along_axis(sgn, k[..., None], axis=-1), axis=-1)
    return np.where(n > 0, g_out, g_in)


# ---------------------------------------------------------------------------
# on-disk cache
#
# Layout (little endian): magic b"SDF1", dims 3*u32, origin 3*f64,
# spacing 3*f64, padding f64, then nx*ny*nz f32 values in row-major (C) order.

_HEADER = struct.Struct("<4s3I3d3dd")


def save_grid(grid: SdfGrid, path) -> None:
    hdr = _HEADER.pack(b"SDF1", *grid.dims, *grid.origin, *grid.spacing, grid.padding)
    Path(path).write_bytes(hdr + np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def load_grid(path) -> SdfGrid:
    buf = Path(path).read_bytes()
    magic, nx, ny, nz, ox, oy, oz, sx, sy, sz, pad = _HEADER.unpack_from(buf)
    if magic != b"SDF1":
        raise ValueError(f"{path}: not an SDF grid file")
    vals = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size, count=nx * ny * nz)
    return SdfGrid(np.array([ox, oy, oz]), np.array([sx, sy, sz]), vals.reshape(nx, ny, nz).astype(float), pad)


def cache_key(asset_id: str, size, resolution: int) -> str:
    s = f"{asset_id}|{','.join(f'{v:.6f}' for v in size)}|{resolution}"
    return hashlib.sha1(s.encode()).hexdigest()[:16]
