"""Shared concept vocabulary, explanation AST and the mime wire format.

Wire layout (all integers little-endian)::

    u8   version (=1)
    u16  clause count n
    n x  clause record: u16 action, u16 arg0, u16 arg1, u16 relation
                        (0xFFFF marks an absent optional slot)
    u16  link count m
    m x  link record:   u16 index_a, u16 connector, u16 index_b

Records are fixed width, so comparing two serializations bytewise orders
explanations by clause count first, then by clause ids.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

WIRE_VERSION = 1
NONE_ID = 0xFFFF
DEFAULT_MAX_CLAUSES = 6

SEQ_NAME = "then"
PURPOSE_NAME = "in-order-to"

_HEAD = struct.Struct("<BH")
_CLAUSE = struct.Struct("<HHHH")
_COUNT = struct.Struct("<H")
_LINK = struct.Struct("<HHH")


class ConceptError(ValueError):
    """Invalid vocabulary, clause or explanation."""


class UndecomposableConcept(ConceptError):
    pass


class MalformedMime(ConceptError):
    pass


class Kind(enum.Enum):
    OBJECT = "object"
    ACTION = "action"
    RELATION = "relation"
    CONNECTOR = "connector"


@dataclass(frozen=True)
class Concept:
    id: int
    kind: Kind
    name: str


@dataclass(frozen=True)
class Clause:
    action: int
    arg0: int
    arg1: int | None = None
    relation: int | None = None

    def concepts(self) -> tuple[int, ...]:
        out = [self.action, self.arg0]
        if self.arg1 is not None:
            out.append(self.arg1)
        if self.relation is not None:
            out.append(self.relation)
        return tuple(out)

    def record(self) -> bytes:
        return _CLAUSE.pack(
            self.action,
            self.arg0,
            NONE_ID if self.arg1 is None else self.arg1,
            NONE_ID if self.relation is None else self.relation,
        )


Link = tuple[int, int, int]


@dataclass(frozen=True)
class Explanation:
    clauses: tuple[Clause, ...]
    links: tuple[Link, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))
        object.__setattr__(self, "links", tuple(tuple(l) for l in self.links))
        if not self.clauses:
            raise ConceptError("explanation needs at least one clause")
        n = len(self.clauses)
        for a, _, b in self.links:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ConceptError(f"link ({a}, {b}) does not join two distinct clauses")

    def __len__(self) -> int:
        return len(self.clauses)

    def concepts(self) -> set[int]:
        out = set()
        for c in self.clauses:
            out.update(c.concepts())
        for _, conn, _ in self.links:
            out.add(conn)
        return out


@dataclass(frozen=True)
class CanonicalFact:
    """Receiver-independent fact triple; ``obj`` is "" when absent."""

    subject: str
    predicate: int
    obj: str
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ConceptError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.subject, self.predicate, self.obj)

    def sort_key(self):
        return (self.subject, self.predicate, self.obj, self.confidence)


def sorted_facts(facts: Iterable[CanonicalFact]) -> list[CanonicalFact]:
    return sorted(facts, key=CanonicalFact.sort_key)


@dataclass(frozen=True)
class Decomposition:
    """Definition of a composite action.

    ``head`` is the clause used to invoke the composite; ``body`` is the
    fragment it stands for.
    """

    head: Clause
    body: Explanation


@dataclass(frozen=True, eq=False)
class Vocabulary:
    concepts: tuple[Concept, ...]
    decompositions: Mapping[int, Decomposition] = field(default_factory=dict)
    referents: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "concepts", tuple(self.concepts))
        object.__setattr__(self, "decompositions", dict(self.decompositions))
        object.__setattr__(self, "referents", dict(self.referents))
        names = set()
        for i, c in enumerate(self.concepts):
            if c.id != i:
                raise ConceptError(f"concept ids must be dense, got {c.id} at {i}")
            if c.name in names:
                raise ConceptError(f"duplicate concept name {c.name!r}")
            names.add(c.name)
        object.__setattr__(self, "_by_name", {c.name: c.id for c in self.concepts})
        conns = {c.name for c in self.concepts if c.kind is Kind.CONNECTOR}
        if conns != {SEQ_NAME, PURPOSE_NAME}:
            raise ConceptError(f"connectors must be exactly {{{SEQ_NAME}, {PURPOSE_NAME}}}, got {sorted(conns)}")
        for cid in self.referents:
            if self.kind(cid) is not Kind.OBJECT:
                raise ConceptError(f"referent bound to non-object concept {self.name(cid)!r}")
        refs = [self.referent(c.id) for c in self.concepts if c.kind is Kind.OBJECT]
        if len(set(refs)) != len(refs):
            raise ConceptError("object referents must be unique")
        object.__setattr__(self, "_by_referent", {self.referent(c.id): c.id for c in self.concepts if c.kind is Kind.OBJECT})
        for cid, dec in self.decompositions.items():
            if self.kind(cid) is not Kind.ACTION:
                raise ConceptError(f"composite {self.name(cid)!r} must be an action")
            if dec.head.action != cid:
                raise ConceptError(f"head clause of {self.name(cid)!r} must use it as action")
            self.validate(dec.head, composite_ok=True)
            self.validate_explanation(dec.body, max_clauses=None)
        object.__setattr__(self, "_rank", self._ranks())
        object.__setattr__(self, "_meaning_cache", {})

    def __getstate__(self):
        # the meaning memo is derived data; leave it out so pickles reflect content only
        return {k: v for k, v in self.__dict__.items() if k != "_meaning_cache"}

    def __setstate__(self, state):
        self.__dict__.update(state)
        object.__setattr__(self, "_meaning_cache", {})

    # lookup -------------------------------------------------------------
    def __len__(self) -> int:
        return len(self.concepts)

    def __contains__(self, cid) -> bool:
        return isinstance(cid, int) and 0 <= cid < len(self.concepts)

    def id(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise ConceptError(f"unknown concept {name!r}") from None

    def name(self, cid: int) -> str:
        return self.concepts[cid].name

    def kind(self, cid: int) -> Kind:
        return self.concepts[cid].kind

    @property
    def seq(self) -> int:
        return self._by_name[SEQ_NAME]

    @property
    def purpose(self) -> int:
        return self._by_name[PURPOSE_NAME]

    def referent(self, cid: int) -> str:
        return self.referents.get(cid, self.concepts[cid].name)

    def object_for(self, entity: str) -> int | None:
        return self._by_referent.get(entity)

    def is_composite(self, cid: int) -> bool:
        return cid in self.decompositions

    def rank(self, cid: int) -> int:
        """Primitivity rank: 0 for primitives, 1 + max rank of the body otherwise."""
        return self._rank[cid]

    def content_ids(self) -> list[int]:
        return [c.id for c in self.concepts if c.kind is not Kind.CONNECTOR]

    def with_referents(self, overrides: Mapping[str, str]) -> "Vocabulary":
        refs = dict(self.referents)
        for name, ent in overrides.items():
            refs[self.id(name)] = ent
        return Vocabulary(self.concepts, self.decompositions, refs)

    def _ranks(self) -> dict[int, int]:
        rank: dict[int, int] = {}
        visiting: set[int] = set()

        def visit(cid):
            if cid in rank:
                return rank[cid]
            if cid not in self.decompositions:
                rank[cid] = 0
                return 0
            if cid in visiting:
                raise ConceptError(f"cyclic decomposition through {self.name(cid)!r}")
            visiting.add(cid)
            r = 1 + max(visit(x) for x in self.decompositions[cid].body.concepts())
            visiting.discard(cid)
            rank[cid] = r
            return r

        for c in self.concepts:
            visit(c.id)
        return rank

    # validation ---------------------------------------------------------
    def validate(self, clause: Clause, composite_ok: bool = True) -> None:
        for cid in clause.concepts():
            if cid not in self:
                raise ConceptError(f"concept id {cid} not in vocabulary")
        if self.kind(clause.action) is not Kind.ACTION:
            raise ConceptError(f"{self.name(clause.action)!r} is not an action")
        if not composite_ok and self.is_composite(clause.action):
            raise ConceptError(f"{self.name(clause.action)!r} is composite")
        if self.kind(clause.arg0) is not Kind.OBJECT:
            raise ConceptError(f"{self.name(clause.arg0)!r} is not an object")
        if clause.arg1 is not None and self.kind(clause.arg1) is not Kind.OBJECT:
            raise ConceptError(f"{self.name(clause.arg1)!r} is not an object")
        if clause.relation is not None:
            if self.kind(clause.relation) is not Kind.RELATION:
                raise ConceptError(f"{self.name(clause.relation)!r} is not a relation")
            if clause.arg1 is None:
                raise ConceptError("a relation needs a second argument")

    def validate_explanation(self, e: Explanation, max_clauses: int | None = DEFAULT_MAX_CLAUSES) -> None:
        if max_clauses is not None and len(e) > max_clauses:
            raise ConceptError(f"{len(e)} clauses exceed the limit of {max_clauses}")
        for c in e.clauses:
            self.validate(c)
        for _, conn, _ in e.links:
            if conn not in (self.seq, self.purpose):
                raise ConceptError(f"link connector {conn} is not a connector")
        if not seq_links_acyclic(e, self.seq):
            raise ConceptError("seq links form a cycle")

    # meaning --------------------------------------------------------------
    def meaning(self, clause: Clause) -> tuple[tuple[tuple[str, int, str], ...], str, str]:
        """Fact keys a clause stands for, plus its first and last link anchor.

        Composite clauses mean their full (recursive) definition.
        """
        hit = self._meaning_cache.get(clause)
        if hit is not None:
            return hit
        if clause.action in self.decompositions:
            body = self.decompositions[clause.action].body
            parts = [self.meaning(c) for c in body.clauses]
            keys = [k for p in parts for k in p[0]]
            for a, conn, b in body.links:
                if conn == self.purpose:
                    keys.append((parts[a][2], conn, parts[b][1]))
            out = (tuple(dict.fromkeys(keys)), parts[0][1], parts[-1][2])
        else:
            s = self.referent(clause.arg0)
            o = "" if clause.arg1 is None else self.referent(clause.arg1)
            keys = [(s, clause.action, o)]
            if clause.relation is not None:
                keys.append((s, clause.relation, o))
            anchor = o if clause.arg1 is not None else s
            out = (tuple(keys), anchor, anchor)
        self._meaning_cache[clause] = out
        return out


def seq_links_acyclic(e: Explanation, seq_id: int) -> bool:
    n = len(e.clauses)
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, conn, b in e.links:
        if conn == seq_id:
            adj[a].append(b)
    state = [0] * n
    for root in range(n):
        if state[root]:
            continue
        stack = [(root, iter(adj[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state[nxt] == 1:
                return False
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(adj[nxt])))
    return True


# wire format ---------------------------------------------------------------
def serialize_explanation(e: Explanation) -> bytes:
    parts = [_HEAD.pack(WIRE_VERSION, len(e.clauses))]
    parts.extend(c.record() for c in e.clauses)
    parts.append(_COUNT.pack(len(e.links)))
    parts.extend(_LINK.pack(*l) for l in e.links)
    return b"".join(parts)


def deserialize_explanation(data: bytes) -> Explanation:
    try:
        version, n = _HEAD.unpack_from(data, 0)
        if version != WIRE_VERSION:
            raise MalformedMime(f"unsupported wire version {version}")
        off = _HEAD.size
        clauses = []
        for _ in range(n):
            a, x, y, r = _CLAUSE.unpack_from(data, off)
            off += _CLAUSE.size
            clauses.append(Clause(a, x, None if y == NONE_ID else y, None if r == NONE_ID else r))
        (m,) = _COUNT.unpack_from(data, off)
        off += _COUNT.size
        links = []
        for _ in range(m):
            links.append(_LINK.unpack_from(data, off))
            off += _LINK.size
    except struct.error as exc:
        raise MalformedMime(f"truncated mime payload: {exc}") from None
    if off != len(data):
        raise MalformedMime(f"{len(data) - off} trailing bytes")
    try:
        return Explanation(tuple(clauses), tuple(links))
    except ConceptError as exc:
        raise MalformedMime(str(exc)) from None


# expansion -----------------------------------------------------------------
def _splice(e: Explanation, v: Vocabulary, should_expand) -> Explanation:
    """Replace every clause selected by ``should_expand`` with its definition, recursively."""
    clauses: list[Clause] = []
    links: list[Link] = []
    spans: list[tuple[int, int]] = []
    for c in e.clauses:
        start = len(clauses)
        if v.is_composite(c.action) and should_expand(c):
            sub = _splice(v.decompositions[c.action].body, v, should_expand)
            clauses.extend(sub.clauses)
            links.extend((a + start, conn, b + start) for a, conn, b in sub.links)
        else:
            clauses.append(c)
        spans.append((start, len(clauses) - 1))
    for a, conn, b in e.links:
        links.append((spans[a][1], conn, spans[b][0]))
    return Explanation(tuple(clauses), tuple(sorted(set(links))))


def expand(e: Explanation, v: Vocabulary, known: Iterable[int]) -> Explanation:
    """Rewrite ``e`` so that it only uses concepts in ``known``.

    Composite actions the audience lacks are replaced in place by their
    definitions; a missing primitive raises ``UndecomposableConcept``.
    """
    known = set(known)
    for cid in e.concepts():
        if cid not in v:
            raise ConceptError(f"concept id {cid} not in vocabulary")
    out = _splice(e, v, lambda c: c.action not in known)
    missing = out.concepts() - known
    if missing:
        names = ", ".join(sorted(v.name(c) for c in missing))
        raise UndecomposableConcept(f"no decomposition for unknown concept(s): {names}")
    return out if out != e else e


def composite_concepts(e: Explanation, v: Vocabulary) -> set[int]:
    return {c.action for c in e.clauses if v.is_composite(c.action)}


def render(e: Explanation, v: Vocabulary) -> str:
    """Human readable one-liner, e.g. ``[0] walk we fallen-tree on-top-of | 0 in-order-to 1``."""
    out = []
    for i, c in enumerate(e.clauses):
        words = [v.name(c.action), v.name(c.arg0)]
        if c.arg1 is not None:
            words.append(v.name(c.arg1))
        if c.relation is not None:
            words.append(v.name(c.relation))
        out.append(f"[{i}] " + " ".join(words))
    text = "; ".join(out)
    if e.links:
        text += " | " + ", ".join(f"{a} {v.name(c)} {b}" for a, c, b in e.links)
    return text


def make_vocabulary(
    spec: Sequence[tuple[str, str]],
    decompositions: Mapping[str, Mapping] | None = None,
    referents: Mapping[str, str] | None = None,
) -> Vocabulary:
    """Build a vocabulary from ``(name, kind)`` pairs and name-level tables.

    Decompositions map a composite name to ``{"head": [...], "clauses": [[...]],
    "links": [[a, connector, b]]}`` with clause slots given as names or None.
    """
    concepts = tuple(Concept(i, Kind(kind), name) for i, (name, kind) in enumerate(spec))
    ids = {c.name: c.id for c in concepts}

    def cid(name):
        try:
            return ids[name]
        except KeyError:
            raise ConceptError(f"unknown concept {name!r}") from None

    def clause(slots):
        slots = list(slots) + [None] * (4 - len(slots))
        return Clause(*(None if s is None else cid(s) for s in slots))

    decs = {}
    for name, d in (decompositions or {}).items():
        body = Explanation(
            tuple(clause(c) for c in d["clauses"]),
            tuple((a, cid(conn), b) for a, conn, b in d.get("links", ())),
        )
        decs[cid(name)] = Decomposition(clause(d["head"]), body)
    refs = {cid(k): r for k, r in (referents or {}).items()}
    return Vocabulary(concepts, decs, refs)


def clause_from_names(v: Vocabulary, *slots: str | None) -> Clause:
    slots = list(slots) + [None] * (4 - len(slots))
    return Clause(*(None if s is None else v.id(s) for s in slots))
