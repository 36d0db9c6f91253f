"""Scene data model, layout JSON (de)serialization and pose-vector conversion.

Conventions used throughout the package:

* lengths are meters, yaw is radians in ``(-pi, pi]``;
* the table top is the plane ``z = 0`` and the table is centered on the origin;
* an object's ``position`` is the center of its axis-aligned bounding box
  (in the object frame, before yaw);
* a pose vector for ``N`` objects is laid out ``[p_1 .. p_N | r_1 .. r_N]``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import LengthMismatch, SchemaError, UnitError

ROLES = ("task", "important_bg", "secondary_bg")
STAGE_ROLES = {"t": "task", "B": "important_bg", "b": "secondary_bg"}
TABLE_SOLID_DEPTH = 1.0


def wrap_angle(a):
    """Wrap an angle (scalar or array) to ``(-pi, pi]``.

    Values already in range are returned unchanged (bit for bit).
    """
    a = np.asarray(a, dtype=float)
    in_range = (a > -math.pi) & (a <= math.pi)
    wrapped = np.where(in_range, a, math.pi - np.mod(math.pi - a, 2.0 * math.pi))
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class TableSpec:
    width: float = 1.2
    depth: float = 0.8
    thickness: float = 0.04
    top_height: float = 0.0

    def __post_init__(self):
        for name in ("width", "depth", "thickness"):
            if not getattr(self, name) > 0:
                raise UnitError(f"table {name} must be positive, got {getattr(self, name)!r}")

    @property
    def solid_depth(self) -> float:
        # penetration solid reaches well below thin slabs so sunk objects are pushed up
        return max(self.thickness, TABLE_SOLID_DEPTH)

    @property
    def half_extents(self) -> np.ndarray:
        return np.array([self.width / 2, self.depth / 2, self.solid_depth / 2])

    @property
    def slab_center(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.top_height - self.solid_depth / 2])


@dataclass(frozen=True)
class ObjectRecord:
    id: int
    description: str
    asset_id: str
    size: tuple[float, float, float]
    position: tuple[float, float, float]
    yaw: float = 0.0
    role: str = "task"
    extra: Mapping[str, Any] = field(default_factory=dict, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if len(self.size) != 3 or len(self.position) != 3:
            raise SchemaError("size and position must be 3-vectors")
        if not all(s > 0 for s in self.size):
            raise UnitError(f"object {self.id}: size components must be positive, got {self.size}")
        if self.role not in ROLES:
            raise SchemaError(f"object {self.id}: unknown role {self.role!r}")

    @property
    def category(self) -> str:
        return category_token(self.description)

    def with_pose(self, position, yaw) -> "ObjectRecord":
        return dataclasses.replace(self, position=tuple(position), yaw=yaw)


@dataclass(frozen=True)
class LayoutScene:
    table: TableSpec
    objects: tuple[ObjectRecord, ...] = ()
    instruction: str = ""
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"duplicate object ids: {ids}")

    def __len__(self):
        return len(self.objects)

    @property
    def ids(self) -> list[int]:
        return [o.id for o in self.objects]

    def by_id(self, oid: int) -> ObjectRecord:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def next_id(self) -> int:
        return max(self.ids, default=-1) + 1

    def with_objects(self, objects: Iterable[ObjectRecord]) -> "LayoutScene":
        return dataclasses.replace(self, objects=tuple(objects))

    def sizes(self) -> np.ndarray:
        return np.array([o.size for o in self.objects], dtype=float).reshape(-1, 3)

    def positions(self) -> np.ndarray:
        return np.array([o.position for o in self.objects], dtype=float).reshape(-1, 3)

    def yaws(self) -> np.ndarray:
        return np.array([o.yaw for o in self.objects], dtype=float)


# ---------------------------------------------------------------------------
# category tokens

_STOPWORDS = {"a", "an", "the", "of", "with", "and", "small", "large", "big", "little", "tall", "short"}


def tokenize(text: str) -> list[str]:
    out = []
    for raw in text.lower().replace("-", " ").replace("_", " ").split():
        tok = "".join(ch for ch in raw if ch.isalnum())
        if tok and tok not in _STOPWORDS:
            out.append(tok)
    return out


def category_token(description: str) -> str:
    """Head noun of a description: the last content word ("red ceramic bowl" -> "bowl")."""
    toks = tokenize(description)
    return toks[-1] if toks else ""


# ---------------------------------------------------------------------------
# JSON

_OBJECT_KEYS = ("id", "description", "asset_id", "size", "position", "yaw", "role")


def _require(d: Mapping, key: str, where: str):
    if key not in d:
        raise SchemaError(f"{where}: missing required field {key!r}")
    return d[key]


def _vec3(value, where: str) -> tuple[float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise SchemaError(f"{where}: expected a list of 3 numbers, got {value!r}")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{where}: expected numbers, got {value!r}")
        out.append(float(v))
    return tuple(out)


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {value!r}")
    return float(value)


def object_from_dict(d: Mapping, index: int = 0) -> ObjectRecord:
    where = f"objects[{index}]"
    if not isinstance(d, Mapping):
        raise SchemaError(f"{where}: expected an object")
    oid = d.get("id", index)
    if isinstance(oid, bool) or not isinstance(oid, int):
        raise SchemaError(f"{where}.id: expected an integer, got {oid!r}")
    desc = _require(d, "description", where)
    if not isinstance(desc, str):
        raise SchemaError(f"{where}.description: expected a string")
    asset_id = d.get("asset_id", "")
    if not isinstance(asset_id, str):
        raise SchemaError(f"{where}.asset_id: expected a string")
    size = _vec3(_require(d, "size", where), f"{where}.size")
    if not all(s > 0 for s in size):
        raise UnitError(f"{where}.size: components must be positive, got {list(size)}")
    position = _vec3(_require(d, "position", where), f"{where}.position")
    yaw = _number(d.get("yaw", 0.0), f"{where}.yaw")
    role = d.get("role", "task")
    if role not in ROLES:
        raise SchemaError(f"{where}.role: expected one of {ROLES}, got {role!r}")
    extra = {k: v for k, v in d.items() if k not in _OBJECT_KEYS}
    return ObjectRecord(oid, desc, asset_id, size, position, yaw, role, extra)


def object_to_dict(o: ObjectRecord) -> dict:
    d = {
        "id": o.id,
        "description": o.description,
        "asset_id": o.asset_id,
        "size": list(o.size),
        "position": list(o.position),
        "yaw": o.yaw,
        "role": o.role,
    }
    d.update(o.extra)
    return d


def scene_from_dict(doc: Mapping) -> LayoutScene:
    if not isinstance(doc, Mapping):
        raise SchemaError("layout: top level must be a JSON object")
    table_d = _require(doc, "table", "layout")
    if not isinstance(table_d, Mapping):
        raise SchemaError("layout.table: expected an object")
    dims = {k: _number(_require(table_d, k, "layout.table"), f"layout.table.{k}")
            for k in ("width", "depth", "thickness")}
    if not all(v > 0 for v in dims.values()):
        raise UnitError(f"layout.table: dimensions must be positive, got {dims}")
    table = TableSpec(**dims, top_height=_number(table_d.get("top_height", 0.0), "layout.table.top_height"))
    objs = _require(doc, "objects", "layout")
    if not isinstance(objs, list):
        raise SchemaError("layout.objects: expected a list")
    instruction = doc.get("instruction", "")
    if not isinstance(instruction, str):
        raise SchemaError("layout.instruction: expected a string")
    extra = {k: v for k, v in doc.items() if k not in ("instruction", "table", "objects")}
    table_extra = {k: v for k, v in table_d.items() if k not in ("width", "depth", "thickness", "top_height")}
    if table_extra:
        extra["__table_extra__"] = table_extra
    return LayoutScene(table, tuple(object_from_dict(o, i) for i, o in enumerate(objs)), instruction, extra)


def scene_to_dict(scene: LayoutScene) -> dict:
    extra = dict(scene.extra)
    table = {"width": scene.table.width, "depth": scene.table.depth, "thickness": scene.table.thickness}
    if scene.table.top_height != 0.0:
        table["top_height"] = scene.table.top_height
    table.update(extra.pop("__table_extra__", {}))
    doc = {"instruction": scene.instruction, "table": table,
           "objects": [object_to_dict(o) for o in scene.objects]}
    doc.update(extra)
    return doc


def parse_layout(text: str | bytes) -> LayoutScene:
    """Parse a layout JSON document.

    Unknown keys at the top level and on objects are kept in ``extra`` and
    written back unchanged by :func:`serialize_layout`.

    Raises:
        SchemaError: missing field or wrong type.
        UnitError: non-positive size.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"layout is not valid JSON: {exc}") from exc
    return scene_from_dict(doc)


def serialize_layout(scene: LayoutScene, indent: int | None = 2) -> str:
    return json.dumps(scene_to_dict(scene), indent=indent)


# ---------------------------------------------------------------------------
# pose vectors

def to_pose_vector(scene: LayoutScene) -> np.ndarray:
    """Flatten poses to ``[p_1 .. p_N | r_1 .. r_N]`` (length ``4N``)."""
    return np.concatenate([scene.positions().ravel(), scene.yaws()])


def split_pose_vector(x, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(positions (N,3), yaws (N,))`` views of a pose vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size % 4:
        raise LengthMismatch(f"pose vector length {x.size} is not a multiple of 4")
    n = x.size // 4 if n is None else n
    if x.size != 4 * n:
        raise LengthMismatch(f"pose vector length {x.size} != 4 * {n}")
    return x[: 3 * n].reshape(n, 3), x[3 * n:]


def join_pose_vector(positions, yaws) -> np.ndarray:
    return np.concatenate([np.asarray(positions, float).ravel(), np.asarray(yaws, float).ravel()])


def apply_pose_vector(scene: LayoutScene, x, wrap: bool = True) -> LayoutScene:
    """Return a copy of ``scene`` with poses taken from ``x``.

    Only positions and yaws change; sizes, descriptions, asset ids and roles
    are carried over untouched.
    """
    n = len(scene.objects)
    x = np.asarray(x, dtype=float)
    if x.shape != (4 * n,):
        raise LengthMismatch(f"pose vector has shape {x.shape}, scene has {n} objects (expected {(4 * n,)})")
    pos, yaw = split_pose_vector(x, n)
    objs = []
    for o, p, r in zip(scene.objects, pos, yaw):
        objs.append(o.with_pose(tuple(float(v) for v in p), wrap_angle(r) if wrap else float(r)))
    return scene.with_objects(objs)


def make_scene(objects: Sequence[Mapping], table: TableSpec | None = None, instruction: str = "") -> LayoutScene:
    """Convenience constructor from plain dicts (ids default to list index)."""
    return LayoutScene(table or TableSpec(), tuple(object_from_dict(o, i) for i, o in enumerate(objects)), instruction)
