"""Parametric primitive asset catalog.

Stands in for a 3D asset library: every entry is a watertight triangle mesh
generated from a small parametric family (box, cylinder, sphere, plate, bowl,
tray, mug), normalized to a unit bounding box centered on the origin, plus
category tokens used for retrieval and a canonical size.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DegenerateMesh
from .layout import tokenize

EMBED_DIM = 64
N_RAW_FEATURES = 28


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (V, 3) float
    triangles: np.ndarray  # (T, 3) int
    category: str = ""

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def extents(self) -> np.ndarray:
        lo, hi = self.bounds
        return hi - lo

    def triangle_vertices(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        v = self.triangle_vertices()
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def signed_volume(self) -> float:
        v = self.triangle_vertices()
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def to_obj(self) -> str:
        lines = [f"# {self.category}"] if self.category else []
        lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in self.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.triangles]
        return "\n".join(lines) + "\n"


def is_watertight(mesh: Mesh) -> bool:
    """Edge-manifold check: every undirected edge is used by exactly two
    triangles, once in each direction (consistent winding)."""
    tri = mesh.triangles
    directed = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    if np.any(directed[:, 0] == directed[:, 1]):
        return False
    fwd = Counter(map(tuple, directed.tolist()))
    if any(c != 1 for c in fwd.values()):
        return False
    return all((b, a) in fwd for a, b in fwd)


def _normalize(vertices: np.ndarray, triangles: np.ndarray, category: str) -> Mesh:
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    v = (vertices - (lo + hi) / 2) / (hi - lo)
    mesh = Mesh(v, triangles.astype(np.int64), category)
    if mesh.signed_volume() < 0:
        mesh = Mesh(v, triangles[:, ::-1].astype(np.int64).copy(), category)
    return mesh


def revolve(profile: Sequence[tuple[float, float]], segments: int = 32, square: bool = False,
            category: str = "") -> Mesh:
    """Solid of revolution from an (r, z) profile.

    The profile must start and end on the axis (r == 0); interior points must
    have r > 0. With ``square=True`` the sweep path is an axis-aligned square
    instead of a circle (4 segments), which yields boxes and trays.
    """
    prof = np.asarray(profile, dtype=float)
    if prof[0, 0] != 0 or prof[-1, 0] != 0 or np.any(prof[1:-1, 0] <= 0):
        raise DegenerateMesh("profile must start and end on the axis with r > 0 in between")
    if square:
        segments = 4
        ang = math.pi / 4 + np.arange(4) * math.pi / 2
        ring = np.stack([np.cos(ang), np.sin(ang)], axis=1) * math.sqrt(2.0)
    else:
        ang = np.arange(segments) * 2 * math.pi / segments
        ring = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    verts = [[0.0, 0.0, prof[0, 1]]]
    n_rings = len(prof) - 2
    for r, z in prof[1:-1]:
        for cx, cy in ring:
            verts.append([r * cx, r * cy, z])
    verts.append([0.0, 0.0, prof[-1, 1]])
    top = len(verts) - 1

    def vid(k, s):
        return 1 + k * segments + (s % segments)

    tris = []
    for s in range(segments):
        tris.append([0, vid(0, s + 1), vid(0, s)])
    for k in range(n_rings - 1):
        for s in range(segments):
            a, b = vid(k, s), vid(k, s + 1)
            c, d = vid(k + 1, s + 1), vid(k + 1, s)
            tris.append([a, b, c])
            tris.append([a, c, d])
    for s in range(segments):
        tris.append([top, vid(n_rings - 1, s), vid(n_rings - 1, s + 1)])
    return _normalize(np.asarray(verts), np.asarray(tris), category)


# --- primitive families ----------------------------------------------------
# Every generator returns a mesh normalized to a unit AABB centered at 0.

def make_box(**_) -> Mesh:
    return revolve([(0, 0), (1, 0), (1, 1), (0, 1)], square=True, category="box")


def make_cylinder(segments: int = 32, **_) -> Mesh:
    return revolve([(0, 0), (1, 0), (1, 1), (0, 1)], segments=segments, category="cylinder")


def make_sphere(segments: int = 32, rings: int = 16, **_) -> Mesh:
    th = np.linspace(0, math.pi, rings + 1)
    prof = np.stack([np.sin(th), -np.cos(th)], axis=1)
    prof[0, 0] = prof[-1, 0] = 0.0
    return revolve(prof, segments=segments, category="sphere")


def make_plate(segments: int = 32, **_) -> Mesh:
    # low cylinder with a slightly chamfered lower edge
    return revolve([(0, 0), (0.9, 0), (1, 0.4), (1, 1), (0, 1)], segments=segments, category="plate")


def make_bowl(segments: int = 32, wall: float = 0.08, floor: float = 0.15, base: float = 0.55,
              rings: int = 6, **_) -> Mesh:
    """Hollow bowl: flat base, flaring wall, open top with a flat rim."""
    h = 1.0
    outer = [(base + (1 - base) * math.sin(0.5 * math.pi * k / rings), h * k / rings) for k in range(rings + 1)]
    inner_base = base - wall
    inner = [(inner_base + (1 - wall - inner_base) * math.sin(0.5 * math.pi * k / rings),
              floor + (h - floor) * k / rings) for k in range(rings, -1, -1)]
    prof = [(0.0, 0.0)] + outer + inner + [(0.0, floor)]
    return revolve(prof, segments=segments, category="bowl")


def make_tray(wall: float = 0.06, floor: float = 0.2, **_) -> Mesh:
    """Open box: square sweep of a U-shaped profile."""
    prof = [(0, 0), (1, 0), (1, 1), (1 - wall, 1), (1 - wall, floor), (0, floor)]
    return revolve(prof, square=True, category="tray")


def make_mug(segments: int = 32, wall: float = 0.1, floor: float = 0.1, **_) -> Mesh:
    prof = [(0, 0), (1, 0), (1, 1), (1 - wall, 1), (1 - wall, floor), (0, floor)]
    return revolve(prof, segments=segments, category="mug")


FAMILIES = {
    "box": make_box,
    "cylinder": make_cylinder,
    "sphere": make_sphere,
    "plate": make_plate,
    "bowl": make_bowl,
    "tray": make_tray,
    "mug": make_mug,
}

# Support behavior of each family, used by the dataset generator and mock reasoner.
FLAT_TOP = {"box", "cylinder", "plate"}
CONTAINERS = {"tray", "bowl"}
# (floor height fraction of full height, inner half-width fraction of outer)
CONTAINER_INTERIOR = {"tray": (0.2, 0.94), "bowl": (0.15, 0.47), "mug": (0.1, 0.9)}


@dataclass(frozen=True, eq=False)
class CatalogEntry:
    asset_id: str
    family: str
    tokens: tuple[str, ...]
    size: tuple[float, float, float]
    params: Mapping = field(default_factory=dict)

    @property
    def category(self) -> str:
        return self.tokens[0]


DEFAULT_CATALOG_CONFIG = {
    "size_bounds": [0.01, 0.6],
    "entries": [
        {"asset_id": "apple", "family": "sphere", "tokens": ["apple", "fruit", "ball", "orange", "sphere"], "size": [0.08, 0.08, 0.08]},
        {"asset_id": "banana", "family": "box", "tokens": ["banana", "fruit"], "size": [0.18, 0.05, 0.04]},
        {"asset_id": "book", "family": "box", "tokens": ["book", "notebook"], "size": [0.22, 0.15, 0.03]},
        {"asset_id": "box_large", "family": "box", "tokens": ["box", "carton", "block", "cube"], "size": [0.2, 0.16, 0.1]},
        {"asset_id": "box_small", "family": "box", "tokens": ["box", "block", "cube"], "size": [0.08, 0.08, 0.08]},
        {"asset_id": "fork", "family": "box", "tokens": ["fork", "spoon", "knife", "utensil", "pen"], "size": [0.18, 0.025, 0.012]},
        {"asset_id": "can", "family": "cylinder", "tokens": ["can", "jar", "cylinder"], "size": [0.07, 0.07, 0.12]},
        {"asset_id": "bottle", "family": "cylinder", "tokens": ["bottle"], "size": [0.07, 0.07, 0.22]},
        {"asset_id": "plate", "family": "plate", "tokens": ["plate", "dish"], "size": [0.24, 0.24, 0.02]},
        {"asset_id": "saucer", "family": "plate", "tokens": ["saucer", "coaster"], "size": [0.14, 0.14, 0.015]},
        {"asset_id": "bowl", "family": "bowl", "tokens": ["bowl"], "size": [0.16, 0.16, 0.07]},
        {"asset_id": "tray", "family": "tray", "tokens": ["tray", "basket"], "size": [0.36, 0.26, 0.04]},
        {"asset_id": "mug", "family": "mug", "tokens": ["mug", "cup"], "size": [0.09, 0.09, 0.1]},
        {"asset_id": "laptop", "family": "box", "tokens": ["laptop", "computer"], "size": [0.32, 0.22, 0.02]},
        {"asset_id": "keyboard", "family": "box", "tokens": ["keyboard"], "size": [0.44, 0.14, 0.03]},
    ],
}


class Catalog:
    """Immutable mapping ``asset_id -> CatalogEntry`` with cached unit meshes
    and embedding normalization statistics."""

    def __init__(self, entries: Sequence[CatalogEntry], size_bounds=(0.01, 0.6)):
        ids = [e.asset_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate asset ids in catalog: {ids}")
        self.entries: dict[str, CatalogEntry] = {e.asset_id: e for e in sorted(entries, key=lambda e: e.asset_id)}
        self.size_bounds = (float(size_bounds[0]), float(size_bounds[1]))
        self._meshes: dict[str, Mesh] = {}
        self.embedding_mean = np.zeros(EMBED_DIM)
        self.embedding_std = np.ones(EMBED_DIM)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, asset_id):
        return asset_id in self.entries

    def __getitem__(self, asset_id) -> CatalogEntry:
        return self.entries[asset_id]

    @property
    def categories(self) -> set[str]:
        return {e.category for e in self.entries.values()}

    @property
    def families(self) -> set[str]:
        return {e.family for e in self.entries.values()}

    def unit_mesh(self, asset_id: str) -> Mesh:
        if asset_id not in self._meshes:
            e = self.entries[asset_id]
            self._meshes[asset_id] = FAMILIES[e.family](**dict(e.params))
        return self._meshes[asset_id]

    def mesh(self, asset_id: str, size=None) -> Mesh:
        """Unit mesh of ``asset_id`` scaled to ``size`` (canonical size by default)."""
        size = self.entries[asset_id].size if size is None else size
        return scale_mesh(self.unit_mesh(asset_id), size)


def build_catalog(config: Mapping | str | Path | None = None, embedding_points: int = 4096) -> Catalog:
    """Build a catalog from a config mapping or a JSON file path.

    Config format::

        {"size_bounds": [min, max],
         "entries": [{"asset_id": str, "family": str, "tokens": [str, ...],
                      "size": [x, y, z], "params": {...}}, ...]}

    Raises:
        ConfigError: unknown family, missing fields, bad sizes or a
            generator producing a non-watertight mesh.
    """
    if config is None:
        config = DEFAULT_CATALOG_CONFIG
    elif isinstance(config, (str, Path)):
        config = json.loads(Path(config).read_text())
    try:
        raw_entries = config["entries"]
    except (KeyError, TypeError) as exc:
        raise ConfigError("catalog config needs an 'entries' list") from exc
    entries = []
    for d in raw_entries:
        try:
            fam = d["family"]
            if fam not in FAMILIES:
                raise ConfigError(f"unknown primitive family {fam!r}")
            size = tuple(float(v) for v in d["size"])
            if len(size) != 3 or min(size) <= 0:
                raise ConfigError(f"{d['asset_id']}: bad canonical size {size}")
            tokens = tuple(d.get("tokens") or [fam])
            entries.append(CatalogEntry(d["asset_id"], fam, tokens, size, dict(d.get("params", {}))))
        except KeyError as exc:
            raise ConfigError(f"catalog entry missing field {exc}") from exc
    if not entries:
        raise ConfigError("catalog config enables no entries")
    cat = Catalog(entries, config.get("size_bounds", (0.01, 0.6)))
    for aid in cat.entries:
        if not is_watertight(cat.unit_mesh(aid)):
            raise ConfigError(f"{aid}: generator produced a non-watertight mesh")
    raw = np.stack([_raw_features(sample_surface_points(cat.mesh(a), embedding_points, seed=0), cat.mesh(a))
                    for a in cat.entries])
    mean = np.zeros(EMBED_DIM)
    std = np.ones(EMBED_DIM)
    mean[:N_RAW_FEATURES] = raw.mean(axis=0)
    s = raw.std(axis=0)
    std[:N_RAW_FEATURES] = np.where(s > 1e-9, s, 1.0)
    cat.embedding_mean, cat.embedding_std = mean, std
    return cat


def retrieve_asset(size, description: str, catalog: Catalog) -> str:
    """Best catalog match for ``(size, description)``.

    Ranking: most description tokens shared with the entry's tokens, then
    smallest L2 distance between requested and canonical size, then asset id.
    """
    toks = set(tokenize(description))
    size = np.asarray(size, dtype=float)

    def key(e: CatalogEntry):
        score = len(toks & set(e.tokens))
        return (-score, float(np.linalg.norm(size - np.asarray(e.size))), e.asset_id)

    return min(catalog.entries.values(), key=key).asset_id


def scale_mesh(mesh: Mesh, target_size) -> Mesh:
    """Per-axis scale so the mesh AABB has extents ``target_size``; the AABB
    center is kept in place."""
    target = np.asarray(target_size, dtype=float)
    if target.shape != (3,) or np.any(target <= 0):
        raise DegenerateMesh(f"target size must be 3 positive numbers, got {target_size!r}")
    lo, hi = mesh.bounds
    ext = hi - lo
    if np.any(ext <= 0):
        raise DegenerateMesh(f"mesh has zero extent on some axis: {ext}")
    c = (lo + hi) / 2
    v = (mesh.vertices - c) * (target / ext) + c
    return Mesh(v, mesh.triangles, mesh.category)


def sample_surface_points(mesh: Mesh, count: int, seed=0) -> np.ndarray:
    """Area-weighted uniform surface samples, shape ``(count, 3)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    idx = rng.choice(len(areas), size=count, p=areas / areas.sum())
    u = rng.random((count, 2))
    su = np.sqrt(u[:, 0])
    w0, w1, w2 = 1 - su, su * (1 - u[:, 1]), su * u[:, 1]
    tv = mesh.triangle_vertices()[idx]
    return w0[:, None] * tv[:, 0] + w1[:, None] * tv[:, 1] + w2[:, None] * tv[:, 2]


def bottom_band(points: np.ndarray, fraction: float = 0.05) -> np.ndarray:
    """Points within the lowest ``fraction`` of the cloud's height."""
    z = points[:, 2]
    lo, hi = z.min(), z.max()
    return points[z <= lo + fraction * (hi - lo)]


def vertical_cavity_depth(mesh: Mesh) -> float:
    """Fraction of the height, measured down from the top of the AABB along the
    central vertical line, that lies outside the solid (0 for closed shapes)."""
    lo, hi = mesh.bounds
    c = (lo + hi) / 2
    tv = mesh.triangle_vertices()
    # jitter the line off exact vertices/edges
    px, py = c[0] + 1.3e-7 * (hi[0] - lo[0]), c[1] + 0.7e-7 * (hi[1] - lo[1])
    a, b, cc = tv[:, 0], tv[:, 1], tv[:, 2]
    d = (b[:, 1] - cc[:, 1]) * (a[:, 0] - cc[:, 0]) + (cc[:, 0] - b[:, 0]) * (a[:, 1] - cc[:, 1])
    ok = np.abs(d) > 1e-15
    l1 = np.where(ok, ((b[:, 1] - cc[:, 1]) * (px - cc[:, 0]) + (cc[:, 0] - b[:, 0]) * (py - cc[:, 1])) / np.where(ok, d, 1), -1)
    l2 = np.where(ok, ((cc[:, 1] - a[:, 1]) * (px - cc[:, 0]) + (a[:, 0] - cc[:, 0]) * (py - cc[:, 1])) / np.where(ok, d, 1), -1)
    l3 = 1 - l1 - l2
    hit = ok & (l1 >= 0) & (l2 >= 0) & (l3 >= 0)
    if not hit.any():
        return 1.0
    zs = np.sort(l1[hit] * a[hit, 2] + l2[hit] * b[hit, 2] + l3[hit] * cc[hit, 2])
    top_exit = zs[-1]
    return float((hi[2] - top_exit) / (hi[2] - lo[2]))


def _raw_features(points: np.ndarray, mesh: Mesh) -> np.ndarray:
    points = points[np.lexsort(points.T[::-1])]  # canonical order: sums do not depend on input order
    lo, hi = mesh.bounds
    ext = hi - lo
    center = (lo + hi) / 2
    rel = points - center
    radius = 0.5 * float(np.linalg.norm(ext))
    ratios = np.array([ext[0] / ext[1], ext[1] / ext[2], ext[2] / ext[0]])
    zq = np.percentile(rel[:, 2], [5, 25, 50, 75, 95])
    dist = np.linalg.norm(rel, axis=1) / radius
    hist = np.histogram(np.clip(dist, 0, 1), bins=8, range=(0, 1))[0] / len(points)
    moments = (rel ** 2).mean(axis=0)
    band = bottom_band(points)
    bl, bh = band[:, :2].min(axis=0), band[:, :2].max(axis=0)
    bottom_area = float(np.prod(bh - bl))
    hollow = vertical_cavity_depth(mesh)
    feats = np.concatenate([ext, ratios, points.mean(axis=0) - center, [radius], zq, hist, moments,
                            [bottom_area], [hollow]])
    assert feats.size == N_RAW_FEATURES
    return feats


def geometry_embedding(points: np.ndarray, mesh: Mesh, catalog: Catalog | None = None) -> np.ndarray:
    """64-d handcrafted shape descriptor of a scaled mesh and its surface cloud.

    Layout of the first 28 entries (rest zero):
    extents(3) | extent ratios(3) | centroid offset(3) | bounding radius(1) |
    z quantiles 5/25/50/75/95 (5) | radial histogram(8) | second moments(3) |
    bottom-band footprint area(1) | vertical cavity depth(1).

    With a catalog the vector is z-scored using the catalog statistics.
    Invariant to point order.
    """
    out = np.zeros(EMBED_DIM)
    out[:N_RAW_FEATURES] = _raw_features(np.asarray(points, dtype=float), mesh)
    if catalog is not None:
        out = (out - catalog.embedding_mean) / catalog.embedding_std
    return out


def export_obj(mesh: Mesh, path) -> None:
    Path(path).write_text(mesh.to_obj())
