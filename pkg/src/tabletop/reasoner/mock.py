"""Deterministic grammar-based reasoner for offline runs and tests.

Task language (case-insensitive)::

    instruction := clause (("and" | "then" | "," | ";") clause)*
    clause      := VERB NP [RELATION NP]
    VERB        := place | put | set | add | arrange | position
    NP          := [a | an | the] WORD+
    RELATION    := left_of | right_of | in_front_of | behind | on_top_of | inside | near
                   (spaced forms such as "on top of", "left of", "next to" also parse)

A noun phrase repeated with the same words refers to the same object.
Edits: ``remove NP``, ``add NP [RELATION NP]``, ``replace NP with NP``.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass

import numpy as np

from ..assets import CONTAINER_INTERIOR, CONTAINERS, FLAT_TOP, Catalog, build_catalog
from ..errors import DslParseError
from ..layout import LayoutScene, tokenize
from .base import ObjectDraft, SceneDiff, StageProposal, StageRequest

VERBS = {"place", "put", "set", "add", "arrange", "position"}
RELATIONS = ("left_of", "right_of", "in_front_of", "behind", "on_top_of", "inside", "near")
ARTICLES = {"a", "an", "the"}
_SPACED = [("on top of", "on_top_of"), ("in front of", "in_front_of"), ("left of", "left_of"),
           ("right of", "right_of"), ("next to", "near"), ("to the left_of", "left_of"),
           ("to the right_of", "right_of"), ("in_front of", "in_front_of")]
_SPLIT = re.compile(r"\s*(?:,|;|\band\b|\bthen\b)\s*")

# documented placement constants
GAP = 0.02  # side-by-side clearance of directional relations
NEAR_GAP = 0.03
ANCHOR_GAP = 0.06  # spacing between unrelated anchor objects along x
CLUTTER_SPREAD = {"low": 1.0, "medium": 0.5, "high": 0.12}  # fraction of table half-size for distractors


@dataclass(frozen=True)
class Clause:
    verb: str
    subject: str
    relation: str | None = None
    target: str | None = None


def _normalize_text(text: str) -> str:
    t = " " + text.lower().strip().rstrip(".") + " "
    for a, b in _SPACED:
        t = t.replace(f" {a} ", f" {b} ")
    return " ".join(t.split())


def _np(words: list[str], clause: str) -> str:
    if words and words[0] in ARTICLES:
        words = words[1:]
    if not words:
        raise DslParseError(f"missing noun phrase in {clause!r}")
    return " ".join(words)


def parse_instruction(text: str) -> list[Clause]:
    """Parse a task sentence into clauses; raises DslParseError."""
    text = _normalize_text(text)
    if not text:
        raise DslParseError("empty instruction")
    clauses = []
    for part in _SPLIT.split(text):
        if not part:
            continue
        words = part.split()
        if words[0] not in VERBS:
            raise DslParseError(f"clause {part!r} must start with one of {sorted(VERBS)}")
        rel_at = [k for k, w in enumerate(words) if w in RELATIONS]
        if len(rel_at) > 1:
            raise DslParseError(f"clause {part!r} has more than one relation")
        if rel_at:
            k = rel_at[0]
            clauses.append(Clause(words[0], _np(words[1:k], part), words[k], _np(words[k + 1:], part)))
        else:
            clauses.append(Clause(words[0], _np(words[1:], part)))
    if not clauses:
        raise DslParseError("no clauses in instruction")
    return clauses


def _stable_int(*parts) -> int:
    return int.from_bytes(hashlib.sha1("\x1f".join(map(str, parts)).encode()).digest()[:8], "little")


class MockReasoner:
    """Heuristic placement honoring the relations with fixed offsets.

    Stage ``t`` creates every object named by the instruction. Stage ``B``
    adds ``n_important`` supports or containers touching task objects.
    Stage ``b`` scatters ``n_distractors`` catalog objects; ``clutter``
    (low / medium / high) controls how tightly they crowd the table center,
    so higher clutter means more collisions for the corrector to fix.
    """

    def __init__(self, catalog: Catalog | None = None, seed: int = 0, clutter: str = "medium",
                 n_important: int = 1, n_distractors: int = 3):
        if clutter not in CLUTTER_SPREAD:
            raise ValueError(f"clutter must be one of {sorted(CLUTTER_SPREAD)}")
        self.catalog = catalog or build_catalog()
        self.seed = seed
        self.clutter = clutter
        self.n_important = n_important
        self.n_distractors = n_distractors

    # -- helpers ---------------------------------------------------------

    def _rng(self, req_key) -> np.random.Generator:
        return np.random.default_rng([self.seed, _stable_int(*req_key) % (2 ** 63)])

    def _entry(self, description: str):
        toks = set(tokenize(description))
        best = sorted(self.catalog.entries.values(),
                      key=lambda e: (-len(toks & set(e.tokens)), e.tokens[0] != (tokenize(description) or [""])[-1],
                                     e.asset_id))
        e = best[0]
        if not toks & set(e.tokens):
            return None
        return e

    def _size(self, description: str):
        e = self._entry(description)
        return (e.size, e.family, e.asset_id) if e else ((0.08, 0.08, 0.08), "box", "")

    # -- stages ----------------------------------------------------------

    def propose(self, req: StageRequest) -> StageProposal:
        if req.stage == "t":
            return self._task(req)
        if req.stage == "B":
            return self._important(req)
        return self._distractors(req)

    def _task(self, req: StageRequest) -> StageProposal:
        clauses = parse_instruction(req.instruction)
        names: list[str] = []
        for c in clauses:
            for n in (c.subject, c.target):
                if n and n not in names:
                    names.append(n)
        rel = {c.subject: (c.relation, c.target) for c in clauses if c.relation}
        info = {n: self._size(n) for n in names}
        top = req.table.top_height
        pos: dict[str, np.ndarray] = {}
        # anchors: names that are not placed relative to something else
        anchors = [n for n in names if n not in rel]
        widths = [info[n][0][0] for n in anchors]
        total = sum(widths) + ANCHOR_GAP * max(len(anchors) - 1, 0)
        x = -total / 2
        for n, w in zip(anchors, widths):
            pos[n] = np.array([x + w / 2, 0.0, top + info[n][0][2] / 2])
            x += w + ANCHOR_GAP
        pending = [n for n in names if n in rel]
        for _ in range(len(pending) + 1):
            for n in list(pending):
                r, tgt = rel[n]
                if tgt not in pos:
                    continue
                pos[n] = self._relative(info[n], info[tgt], pos[tgt], r, top)
                pending.remove(n)
        if pending:
            raise DslParseError(f"circular relations among {pending}")
        drafts = tuple(ObjectDraft(n, tuple(info[n][0]), tuple(float(v) for v in pos[n]), 0.0, info[n][2])
                       for n in names)
        return StageProposal(drafts, raw={"clauses": [c.__dict__ for c in clauses]})

    @staticmethod
    def _relative(me, other, at: np.ndarray, relation: str, top: float) -> np.ndarray:
        (s, _, _), (so, fam_o, _) = me, other
        p = np.array(at, dtype=float)
        on_table = top + s[2] / 2
        if relation == "left_of":
            return np.array([p[0] - (s[0] + so[0]) / 2 - GAP, p[1], on_table])
        if relation == "right_of":
            return np.array([p[0] + (s[0] + so[0]) / 2 + GAP, p[1], on_table])
        if relation == "in_front_of":
            return np.array([p[0], p[1] - (s[1] + so[1]) / 2 - GAP, on_table])
        if relation == "behind":
            return np.array([p[0], p[1] + (s[1] + so[1]) / 2 + GAP, on_table])
        if relation == "on_top_of":
            return np.array([p[0], p[1], p[2] + so[2] / 2 + s[2] / 2])
        if relation == "inside":
            floor = CONTAINER_INTERIOR.get(fam_o, (1.0, 1.0))[0]
            return np.array([p[0], p[1], p[2] - so[2] / 2 + floor * so[2] + s[2] / 2])
        if relation == "near":
            return np.array([p[0] + (s[0] + so[0]) / 2 + NEAR_GAP, p[1], on_table])
        raise DslParseError(f"unknown relation {relation!r}")

    def _important(self, req: StageRequest) -> StageProposal:
        task = [o for o in req.context.objects if o.role == "task"]
        if not task or self.n_important <= 0:
            return StageProposal(())
        rng = self._rng(("B", req.instruction, len(req.context.objects)))
        pool = sorted(e.asset_id for e in self.catalog.entries.values() if e.family in FLAT_TOP | CONTAINERS)
        drafts = []
        for k in range(self.n_important):
            host = task[int(rng.integers(len(task)))]
            e = self.catalog[pool[int(rng.integers(len(pool)))]]
            ang = rng.uniform(-math.pi, math.pi)
            d = np.array([math.cos(ang), math.sin(ang)])
            reach = min((e.size[a] + host.size[a]) / 2 / max(abs(d[a]), 1e-9) for a in range(2))
            xy = np.asarray(host.position[:2]) + d * (reach + 0.01)
            z = req.table.top_height + e.size[2] / 2
            drafts.append(ObjectDraft(f"{e.tokens[0]}", e.size, (float(xy[0]), float(xy[1]), z), 0.0, e.asset_id))
        return StageProposal(tuple(drafts), raw={"stage": "B"})

    def _distractors(self, req: StageRequest) -> StageProposal:
        if self.n_distractors <= 0:
            return StageProposal(())
        rng = self._rng(("b", req.instruction, len(req.context.objects)))
        ids = sorted(self.catalog.entries)
        spread = CLUTTER_SPREAD[self.clutter]
        center = req.context.positions()[:, :2].mean(0) if len(req.context.objects) else np.zeros(2)
        half = np.array([req.table.width / 2, req.table.depth / 2])
        drafts = []
        for _ in range(self.n_distractors):
            e = self.catalog[ids[int(rng.integers(len(ids)))]]
            xy = np.clip(center + rng.uniform(-1, 1, 2) * half * spread, -half + 0.05, half - 0.05)
            yaw = float(rng.uniform(-math.pi, math.pi))
            z = req.table.top_height + e.size[2] / 2
            drafts.append(ObjectDraft(e.tokens[0], e.size, (float(xy[0]), float(xy[1]), z), yaw, e.asset_id))
        return StageProposal(tuple(drafts), raw={"stage": "b", "clutter": self.clutter})

    # -- editing ---------------------------------------------------------

    def propose_edit(self, scene: LayoutScene, text: str) -> SceneDiff:
        t = _normalize_text(text)
        words = t.split()
        if not words:
            raise DslParseError("empty edit")
        verb = words[0]
        if verb == "remove":
            target = _np(words[1:], t)
            return SceneDiff(remove=tuple(self._find(scene, target)), raw={"edit": t})
        if verb == "replace":
            if "with" not in words:
                raise DslParseError("replace needs 'replace NP with NP'")
            k = words.index("with")
            old, new = _np(words[1:k], t), _np(words[k + 1:], t)
            return SceneDiff(redescribe={i: new for i in self._find(scene, old)}, raw={"edit": t})
        if verb in VERBS:
            (c,) = parse_instruction(t)
            size, _, aid = self._size(c.subject)
            if c.relation:
                ids = self._find(scene, c.target)
                if not ids:
                    raise DslParseError(f"no {c.target!r} in the scene")
                host = scene.by_id(ids[0])
                tgt = (host.size, self._size(host.description)[1], host.asset_id)
                p = self._relative((size, None, aid), tgt, np.asarray(host.position), c.relation,
                                   scene.table.top_height)
            else:
                p = np.array([0.0, 0.0, scene.table.top_height + size[2] / 2])
            return SceneDiff(add=(ObjectDraft(c.subject, size, tuple(map(float, p)), 0.0, aid),), raw={"edit": t})
        raise DslParseError(f"unknown edit verb {verb!r}")

    @staticmethod
    def _find(scene: LayoutScene, phrase: str) -> list[int]:
        """Ids of objects matching ``phrase``: exact description first, then
        head-noun category. Missing objects give an id of -1 so the diff
        reports a conflict."""
        exact = [o.id for o in scene.objects if o.description.lower() == phrase]
        if exact:
            return exact[:1]
        toks = tokenize(phrase)
        head = toks[-1] if toks else ""
        cat = [o.id for o in scene.objects if o.category == head]
        return cat[:1] if cat else [-1]
