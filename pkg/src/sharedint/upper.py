"""Concept-level model: perspectives, abstraction, concretion and explanation search."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping

import numpy as np

from .concepts import (
    CanonicalFact, Clause, ConceptError, Explanation, Kind, Vocabulary, serialize_explanation,
)
from .lower import ConcreteState, PredictionError

CONCEPT_THRESHOLD = 0.5
DEFAULT_LAMBDA = 0.1
DEFAULT_BEAM = 32
DEFAULT_CAP = 8
N_SLOTS = 3  # subject, predicate, object
SELF = "self"
SENSED_PREDICATES = ("at", "kind", "signals")


class NoCandidates(ValueError):
    pass


class EmptySelection(ValueError):
    pass


@dataclass(frozen=True)
class PerspectiveModel:
    """A point of view for concretion: ``SELF`` or a peer's agent id."""

    peer: str
    known_concepts: Mapping[int, float] = field(default_factory=dict)
    believed_facts: frozenset[CanonicalFact] = frozenset()
    default: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "known_concepts", dict(sorted(self.known_concepts.items())))
        for cid, p in self.known_concepts.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} for concept {cid} outside [0, 1]")
        if not 0.0 <= self.default <= 1.0:
            raise ValueError("default probability outside [0, 1]")
        if self.peer == SELF and any(p != 1.0 for p in self.known_concepts.values()):
            raise ValueError("the self perspective knows its concepts with probability 1")

    def prob(self, cid: int) -> float:
        return self.known_concepts.get(cid, self.default)

    def knows(self, cid: int, threshold: float = CONCEPT_THRESHOLD) -> bool:
        return self.prob(cid) >= threshold

    def with_prob(self, cid: int, p: float) -> "PerspectiveModel":
        known = dict(self.known_concepts)
        known[cid] = p
        return replace(self, known_concepts=known)


def self_perspective(vocab: Vocabulary, known: Iterable[int] | None = None) -> PerspectiveModel:
    """Native concretion: every concept the agent owns at probability 1, the rest unknown."""
    if known is None:
        return PerspectiveModel(SELF, {}, default=1.0)
    ids = set(known) | {vocab.seq, vocab.purpose}
    return PerspectiveModel(SELF, {c: 1.0 for c in sorted(ids)}, default=0.0)


def peer_perspective(peer: str, priors: Mapping[int, float] | None = None, default: float = 1.0,
                     believed: Iterable[CanonicalFact] = ()) -> PerspectiveModel:
    return PerspectiveModel(peer, dict(priors or {}), frozenset(believed), default)


@dataclass(frozen=True)
class Idea:
    facts: frozenset[CanonicalFact]

    def __post_init__(self):
        object.__setattr__(self, "facts", frozenset(self.facts))
        if not self.facts:
            raise EmptySelection("an idea needs at least one fact")

    @property
    def keys(self) -> frozenset:
        return frozenset(f.key for f in self.facts)


@dataclass(frozen=True)
class AbstractModel:
    concept_beliefs: Mapping[int, np.ndarray] = field(default_factory=dict)
    cached_fragments: tuple[tuple[Explanation, int], ...] = ()
    current_focus: Idea | None = None
    perspectives: Mapping[str, PerspectiveModel] = field(default_factory=dict)


def new_abstract_model(vocab: Vocabulary, perspectives: Mapping[str, PerspectiveModel] | None = None,
                       fragments: Iterable[Explanation] | None = None) -> AbstractModel:
    """Uniform slot counts and one cached fragment per composite head clause."""
    beliefs = {c: np.ones(N_SLOTS) for c in vocab.content_ids()}
    if fragments is None:
        fragments = [Explanation((d.head,)) for _, d in sorted(vocab.decompositions.items())]
    return AbstractModel(beliefs, tuple((f, 0) for f in fragments), None, dict(perspectives or {}))


# idea selection -------------------------------------------------------------------
def knowledge_facts(st: ConcreteState) -> list[CanonicalFact]:
    """Goal and plan facts of the lower state; sensed snapshots are excluded."""
    sensed = {st.vocab.id(n) for n in SENSED_PREDICATES if _has(st.vocab, n)}
    return [f for f in st.decoded() if f.predicate not in sensed]


def _has(vocab: Vocabulary, name: str) -> bool:
    try:
        vocab.id(name)
    except ConceptError:
        return False
    return True


def select_idea(st: ConcreteState, trigger: CanonicalFact, cap: int = DEFAULT_CAP) -> Idea:
    """Trigger fact plus plan facts linked to it through shared entities, capped at ``cap``.

    Beyond the trigger the highest-confidence facts win, ties by fact order.
    """
    facts = knowledge_facts(st)
    keyed = {f.key: f for f in facts}
    if trigger.key not in keyed:
        raise EmptySelection("trigger does not reference a decodable fact of this state")
    root = keyed[trigger.key]
    entities = {root.subject, root.obj} - {""}
    chosen = {root.key}
    grew = True
    while grew:
        grew = False
        for f in facts:
            if f.key not in chosen and ({f.subject, f.obj} & entities):
                chosen.add(f.key)
                entities |= {f.subject, f.obj} - {""}
                grew = True
    rest = sorted((keyed[k] for k in chosen if k != root.key), key=lambda f: (-f.confidence, f.sort_key()))
    return Idea(frozenset([root, *rest[: max(cap - 1, 0)]]))


# concretion -----------------------------------------------------------------------
def contributes(clause: Clause, p: PerspectiveModel, v: Vocabulary, threshold: float = CONCEPT_THRESHOLD) -> bool:
    return all(c in v and p.prob(c) >= threshold for c in clause.concepts())


def _concrete_keys(e: Explanation, p: PerspectiveModel, v: Vocabulary, threshold: float) -> dict:
    keys: dict[tuple, None] = {}
    anchors = []
    for c in e.clauses:
        ok = contributes(c, p, v, threshold)
        if ok:
            ks, first, last = v.meaning(c)
            keys.update(dict.fromkeys(ks))
            anchors.append((True, first, last))
        else:
            anchors.append((False, "", ""))
    for a, conn, b in e.links:
        if conn == v.purpose and anchors[a][0] and anchors[b][0]:
            keys[(anchors[a][2], conn, anchors[b][1])] = None
    return keys


def concretize(e: Explanation, p: PerspectiveModel, v: Vocabulary, threshold: float = CONCEPT_THRESHOLD
               ) -> frozenset[CanonicalFact]:
    """Facts an audience with perspective ``p`` draws from ``e``.

    A clause contributes only if every concept in it is known; a known
    composite stands for its whole definition. Purpose links between two
    contributing clauses add an ``(anchor, in-order-to, anchor)`` fact.
    """
    return frozenset(CanonicalFact(s, pr, o, 1.0) for s, pr, o in _concrete_keys(e, p, v, threshold))


def divergence(a: Iterable[CanonicalFact], b: Iterable[CanonicalFact], e_len: int, lam: float) -> float:
    """Confidence-weighted symmetric difference by fact key, plus ``lam * e_len``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    wa: dict = {}
    for f in a:
        wa[f.key] = max(wa.get(f.key, 0.0), f.confidence)
    wb: dict = {}
    for f in b:
        wb[f.key] = max(wb.get(f.key, 0.0), f.confidence)
    terms = sorted([wa[k] for k in wa.keys() - wb.keys()] + [wb[k] for k in wb.keys() - wa.keys()])
    return float(sum(terms)) + lam * e_len


def receiver_estimate(e: Explanation, p: PerspectiveModel, v: Vocabulary, idea: Idea,
                      threshold: float = CONCEPT_THRESHOLD) -> frozenset[CanonicalFact]:
    """Simulated receiver state: its concretion of ``e`` plus idea facts it already believes."""
    out = concretize(e, p, v, threshold)
    keys = idea.keys
    return out | frozenset(f for f in p.believed_facts if f.key in keys)


# abstraction ----------------------------------------------------------------------
def complete_links(clauses: tuple[Clause, ...], idea: Idea, p: PerspectiveModel, v: Vocabulary,
                   threshold: float = CONCEPT_THRESHOLD) -> tuple:
    """Purpose links realising idea purpose facts the clauses leave out (first index pair wins)."""
    produced = set()
    anchors = []
    for c in clauses:
        ok = contributes(c, p, v, threshold)
        ks, first, last = v.meaning(c)
        if ok:
            produced.update(ks)
        anchors.append((ok, first, last))
    links = []
    for s, pr, o in sorted(k for k in idea.keys if k[1] == v.purpose):
        if (s, pr, o) in produced:
            continue
        pair = next(((i, j) for i, (oki, _, li) in enumerate(anchors) if oki and li == s
                     for j, (okj, fj, _) in enumerate(anchors) if j != i and okj and fj == o), None)
        if pair is not None:
            links.append((pair[0], v.purpose, pair[1]))
    return tuple(sorted(links))


def direct_clauses(idea: Idea, v: Vocabulary) -> set[Clause]:
    """One clause per primitive action fact, plus one per relation fact sharing its arguments."""
    out = set()
    keys = idea.keys
    for s, pred, o in keys:
        if pred not in v or v.kind(pred) is not Kind.ACTION or v.is_composite(pred):
            continue
        x = v.object_for(s)
        y = None if o == "" else v.object_for(o)
        if x is None or (o != "" and y is None):
            continue
        out.add(Clause(pred, x, y))
        if y is not None:
            for s2, r, o2 in keys:
                if s2 == s and o2 == o and r in v and v.kind(r) is Kind.RELATION:
                    out.add(Clause(pred, x, y, r))
    return out


def _fragment_clauses(frag: Explanation, p: PerspectiveModel, v: Vocabulary, threshold: float) -> set[Clause]:
    """Known clauses met while expanding ``frag``; unknown composites are opened up."""
    out = set()
    stack = list(frag.clauses)
    while stack:
        c = stack.pop()
        if v.is_composite(c.action):
            if p.prob(c.action) >= threshold:
                out.add(c)
            stack.extend(v.decompositions[c.action].body.clauses)
        else:
            out.add(c)
    return out


def candidate_pool(a: AbstractModel, idea: Idea, v: Vocabulary, p: PerspectiveModel,
                   threshold: float = CONCEPT_THRESHOLD) -> tuple[Clause, ...]:
    """Clauses abstraction may use: contributing under ``p``, meaning inside the idea."""
    keys = idea.keys
    everyone = self_perspective(v)
    pool = direct_clauses(idea, v)
    for frag, _ in a.cached_fragments:
        fk = _concrete_keys(frag, everyone, v, threshold).keys()
        if fk and fk <= keys:
            pool |= _fragment_clauses(frag, p, v, threshold)
    pool = {c for c in pool if contributes(c, p, v, threshold) and set(v.meaning(c)[0]) <= keys}
    return tuple(sorted(pool, key=Clause.record))


def build_explanation(clauses: Iterable[Clause], idea: Idea, p: PerspectiveModel, v: Vocabulary,
                      threshold: float = CONCEPT_THRESHOLD) -> Explanation:
    cl = tuple(sorted(clauses, key=Clause.record))
    return Explanation(cl, complete_links(cl, idea, p, v, threshold))


def score_key(e: Explanation, idea: Idea, p: PerspectiveModel, v: Vocabulary, lam: float,
              threshold: float = CONCEPT_THRESHOLD) -> tuple[float, int, bytes]:
    score = divergence(receiver_estimate(e, p, v, idea, threshold), idea.facts, len(e), lam)
    return (score, len(e), serialize_explanation(e))


def abstract_candidates(a: AbstractModel, idea: Idea, v: Vocabulary, p: PerspectiveModel, *,
                        beam_width: int = DEFAULT_BEAM, max_clauses: int = 6, lam: float = DEFAULT_LAMBDA,
                        threshold: float = CONCEPT_THRESHOLD, trace: list | None = None) -> Iterator[Explanation]:
    """Beam search over clause sets; yields the ``beam_width`` best sets seen, best first.

    Level k holds the ``beam_width`` best k-clause sets; each set is written
    in canonical clause order with completed purpose links.
    """
    pool = candidate_pool(a, idea, v, p, threshold)
    if not pool:
        raise NoCandidates("no vocabulary clause expresses any fact of the idea")
    scored: dict[tuple[int, ...], tuple] = {}

    def key_of(combo):
        k = scored.get(combo)
        if k is None:
            e = build_explanation((pool[i] for i in combo), idea, p, v, threshold)
            k = scored[combo] = (score_key(e, idea, p, v, lam, threshold), e)
        return k

    beam: list[tuple[int, ...]] = [()]
    kept: list[tuple[int, ...]] = []
    for _ in range(max_clauses):
        children = {tuple(sorted(c + (i,))) for c in beam for i in range(len(pool)) if i not in c}
        if not children:
            break
        beam = sorted(children, key=lambda c: key_of(c)[0])[:beam_width]
        kept.extend(beam)
    ranked = sorted(kept, key=lambda c: key_of(c)[0])[:beam_width]
    if trace is not None:
        trace.extend((key_of(c)[1], key_of(c)[0][0]) for c in ranked)
    for c in ranked:
        yield key_of(c)[1]


def select_explanation_scored(a: AbstractModel, idea: Idea, p: PerspectiveModel, v: Vocabulary, *,
                              lam: float = DEFAULT_LAMBDA, beam_width: int = DEFAULT_BEAM, max_clauses: int = 6,
                              threshold: float = CONCEPT_THRESHOLD, trace: list | None = None
                              ) -> tuple[Explanation, float]:
    best = next(abstract_candidates(a, idea, v, p, beam_width=beam_width, max_clauses=max_clauses,
                                    lam=lam, threshold=threshold, trace=trace))
    return best, score_key(best, idea, p, v, lam, threshold)[0]


def select_explanation(a: AbstractModel, idea: Idea, p: PerspectiveModel, v: Vocabulary, lam: float = DEFAULT_LAMBDA,
                       beam_width: int = DEFAULT_BEAM, max_clauses: int = 6,
                       threshold: float = CONCEPT_THRESHOLD) -> Explanation:
    """Candidate minimising divergence between the simulated receiver state and the idea."""
    return select_explanation_scored(a, idea, p, v, lam=lam, beam_width=beam_width, max_clauses=max_clauses,
                                     threshold=threshold)[0]


# learning -------------------------------------------------------------------------
def slot_concepts(f: CanonicalFact, v: Vocabulary) -> list[tuple[int, int]]:
    """(slot, concept id) pairs a fact touches."""
    out = []
    s = v.object_for(f.subject)
    if s is not None:
        out.append((0, s))
    if f.predicate in v:
        out.append((1, f.predicate))
    o = v.object_for(f.obj) if f.obj else None
    if o is not None:
        out.append((2, o))
    return out


def update_abstract(a: AbstractModel, err: PredictionError, v: Vocabulary, theta: float = 0.5
                    ) -> tuple[AbstractModel, bool]:
    """Add error-weighted slot counts; errors above ``theta`` are surprises and drop the focus."""
    if err.magnitude == 0.0:
        return a, False
    beliefs = dict(a.concept_beliefs)
    for f, weight in err.facts:
        for slot, cid in slot_concepts(f, v):
            counts = beliefs.get(cid)
            counts = np.ones(N_SLOTS) if counts is None else counts.copy()
            counts[slot] += weight
            beliefs[cid] = counts
    err_keys = {f.key for f, _ in err.facts}
    everyone = self_perspective(v)
    frags = tuple(
        (frag, n + 1 if _concrete_keys(frag, everyone, v, CONCEPT_THRESHOLD).keys() & err_keys else n)
        for frag, n in a.cached_fragments
    )
    surprised = err.magnitude > theta
    focus = None if surprised else a.current_focus
    return replace(a, concept_beliefs=beliefs, cached_fragments=frags, current_focus=focus), surprised


def cache_fragment(a: AbstractModel, e: Explanation) -> AbstractModel:
    frags = list(a.cached_fragments)
    for i, (f, n) in enumerate(frags):
        if f == e:
            frags[i] = (f, n + 1)
            return replace(a, cached_fragments=tuple(frags))
    return replace(a, cached_fragments=tuple(frags) + ((e, 1),))


def least_primitive(e: Explanation, v: Vocabulary, p: PerspectiveModel | None = None) -> int:
    """Highest-rank content concept in ``e`` (ties: lowest id), skipping ones already below 0.5."""
    ids = [c for c in e.concepts() if v.kind(c) is not Kind.CONNECTOR]
    if p is not None:
        live = [c for c in ids if p.prob(c) >= CONCEPT_THRESHOLD]
        ids = live or ids
    return min(ids, key=lambda c: (-v.rank(c), c))
