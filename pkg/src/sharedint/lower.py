"""The agent's lower system.

Holds the private fact encoding, the Dirichlet-categorical position
beliefs, the blackboard and the built-in units that turn goal items into
motor actions.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .concepts import CanonicalFact, Vocabulary, sorted_facts
from .world import (
    DIRS, GROUP_SUBJECTS, SPAN_PREDICATES, AgentAction, Cell, Entity, GridWorld, Move, Push, Wait,
    cell_str, neighbours, parse_cell, shift, spanning_cells,
)

MASK64 = (1 << 64) - 1
DEFAULT_PRIOR_COUNT = 0.01
MOTOR_CONFIDENCE = 0.9

TAGS = ("goal", "observation", "plan_fragment", "metaphor_request", "metaphor_result")
UNIT_ORDER = ("navigation", "manipulation", "vertical-space")


class ForeignEncoding(ValueError):
    """A private fact was not produced by this codec."""


class CyclicConstraints(ValueError):
    pass


# private encoding -------------------------------------------------------------
@dataclass(frozen=True)
class PrivateFact:
    subject: bytes
    predicate: int
    obj: bytes
    confidence: float
    tag: int  # codec id byte
    check: int  # keyed 8-bit mac over the plaintext


@dataclass(frozen=True)
class PrivateCodec:
    """Seed-keyed injective token mapping.

    Every encoded fact carries the codec's one-byte id and a keyed mac, so a
    codec rejects anything encoded under a codec with a different id.
    """

    seed: int

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & MASK64)
        key = self.seed.to_bytes(8, "little")
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "codec_id", hashlib.blake2b(b"codec-id", key=key, digest_size=1).digest()[0])
        object.__setattr__(self, "_pmask", int.from_bytes(hashlib.blake2b(b"predicate", key=key, digest_size=2).digest(), "little"))
        object.__setattr__(self, "_streams", {})

    def _stream(self, n: int) -> bytes:
        s = self._streams.get(n)
        if s is None:
            out = b""
            block = 0
            while len(out) < n:
                out += hashlib.blake2b(b"tok" + struct.pack("<II", n, block), key=self._key).digest()
                block += 1
            s = self._streams[n] = out[:n]
        return s

    def _xor(self, data: bytes) -> bytes:
        return bytes(a ^ b for a, b in zip(data, self._stream(len(data))))

    def _mac(self, f: CanonicalFact) -> int:
        msg = f"{f.subject}\x00{f.predicate}\x00{f.obj}\x00{f.confidence!r}".encode()
        return hashlib.blake2b(msg, key=self._key, digest_size=1).digest()[0]

    def encode(self, f: CanonicalFact) -> PrivateFact:
        return PrivateFact(
            self._xor(f.subject.encode()), f.predicate ^ self._pmask, self._xor(f.obj.encode()),
            f.confidence, self.codec_id, self._mac(f),
        )

    def decode(self, pf: PrivateFact) -> CanonicalFact:
        if pf.tag != self.codec_id:
            raise ForeignEncoding("codec id mismatch")
        try:
            f = CanonicalFact(
                self._xor(pf.subject).decode(), pf.predicate ^ self._pmask,
                self._xor(pf.obj).decode(), pf.confidence,
            )
        except (UnicodeDecodeError, ValueError):
            raise ForeignEncoding("payload does not decode") from None
        if self._mac(f) != pf.check:
            raise ForeignEncoding("integrity check failed")
        return f

    def accepts(self, pf: PrivateFact) -> bool:
        try:
            self.decode(pf)
        except ForeignEncoding:
            return False
        return True


def encode_fact(codec: PrivateCodec, f: CanonicalFact) -> PrivateFact:
    return codec.encode(f)


def decode_fact(codec: PrivateCodec, pf: PrivateFact) -> CanonicalFact:
    return codec.decode(pf)


# state --------------------------------------------------------------------------
@dataclass(frozen=True)
class BlackboardItem:
    tag: str
    payload: tuple
    producer: str
    seq: int = 0

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown blackboard tag {self.tag!r}")


@dataclass(frozen=True)
class PredictionError:
    magnitude: float
    facts: tuple[tuple[CanonicalFact, float], ...] = ()
    source: str = "observation"


@dataclass(frozen=True)
class StaticMap:
    """Built-in terrain knowledge; entities come from sensing."""

    width: int
    height: int
    ravine: frozenset[Cell] = frozenset()
    goal_cells: frozenset[Cell] = frozenset()
    regions: Mapping[str, frozenset[Cell]] = field(default_factory=dict)

    @classmethod
    def of(cls, w: GridWorld) -> "StaticMap":
        return cls(w.width, w.height, w.ravine, w.goal_cells, dict(w.regions))

    @property
    def n_cells(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class ConcreteState:
    agent_id: str
    codec: PrivateCodec
    vocab: Vocabulary
    terrain: StaticMap
    facts: frozenset[PrivateFact] = frozenset()
    beliefs: Mapping[str, np.ndarray] = field(default_factory=dict)
    blackboard: tuple[BlackboardItem, ...] = ()
    pending_motor: tuple = ()
    expectations: Mapping[str, tuple[Cell, ...]] = field(default_factory=dict)
    prior_count: float = DEFAULT_PRIOR_COUNT
    next_seq: int = 0

    def decoded(self) -> list[CanonicalFact]:
        return sorted_facts(self.codec.decode(pf) for pf in self.facts)

    def item_facts(self, item: BlackboardItem) -> list[CanonicalFact]:
        return [self.codec.decode(pf) for pf in item.payload if isinstance(pf, PrivateFact)]


def new_state(agent_id: str, codec: PrivateCodec, vocab: Vocabulary, terrain: StaticMap,
              prior_count: float = DEFAULT_PRIOR_COUNT) -> ConcreteState:
    return ConcreteState(agent_id, codec, vocab, terrain, prior_count=prior_count)


def deposit(st: ConcreteState, tag: str, payload: Iterable, producer: str = "upper") -> ConcreteState:
    """Append a blackboard item; CanonicalFacts are encoded with the agent's codec."""
    items = []
    new_facts = set()
    for p in payload:
        if isinstance(p, CanonicalFact):
            pf = st.codec.encode(p)
            items.append(pf)
            new_facts.add(pf)
        elif isinstance(p, PrivateFact):
            st.codec.decode(p)
            items.append(p)
            new_facts.add(p)
        else:
            items.append(p)
    item = BlackboardItem(tag, tuple(items), producer, st.next_seq)
    return replace(
        st, blackboard=st.blackboard + (item,), facts=st.facts | new_facts, next_seq=st.next_seq + 1,
    )


def inject_raw(st: ConcreteState, raw: Iterable[PrivateFact]) -> tuple[ConcreteState, int]:
    """Try to merge another agent's encoded facts; only ones passing our own check are kept."""
    ok = {pf for pf in raw if st.codec.accepts(pf)}
    if not ok:
        return st, 0
    return replace(st, facts=st.facts | ok), len(ok)


def raw_facts(st: ConcreteState) -> set[PrivateFact]:
    out = set(st.facts)
    for item in st.blackboard:
        out.update(p for p in item.payload if isinstance(p, PrivateFact))
    return out


# beliefs ------------------------------------------------------------------------
def new_belief(n_cells: int, prior_count: float) -> np.ndarray:
    if prior_count <= 0:
        raise ValueError("pseudo-counts must be positive")
    return np.full(n_cells, float(prior_count))


def predictive(counts: np.ndarray) -> np.ndarray:
    return counts / counts.sum()


def _cell_index(terrain: StaticMap, c: Cell) -> int:
    return c[1] * terrain.width + c[0]


def _positions(facts: Iterable[CanonicalFact], at_id: int) -> dict[str, list[Cell]]:
    pos: dict[str, list[Cell]] = {}
    for f in facts:
        if f.predicate == at_id:
            c = parse_cell(f.obj)
            if c is not None:
                pos.setdefault(f.subject, []).append(c)
    return pos


def observe(st: ConcreteState, obs: Sequence[CanonicalFact], codec: PrivateCodec | None = None
            ) -> tuple[ConcreteState, PredictionError]:
    """Conjugate count update of position beliefs from sensed ``at`` facts.

    The error is 1 minus the mean pre-update predictive probability of the
    observed cells. Entities seen for the first time carry no prediction and
    only seed their belief.
    """
    codec = st.codec if codec is None else codec
    at_id = st.vocab.id("at")
    beliefs = dict(st.beliefs)
    probs = []
    err_facts = []
    for ent, cells in sorted(_positions(obs, at_id).items()):
        fresh = ent not in beliefs
        counts = new_belief(st.terrain.n_cells, st.prior_count) if fresh else beliefs[ent].copy()
        pred = predictive(counts)
        for c in cells:
            idx = _cell_index(st.terrain, c)
            if not fresh:
                probs.append(pred[idx])
                err_facts.append((CanonicalFact(ent, at_id, cell_str(c), 1.0), float(1.0 - pred[idx])))
            counts[idx] += 1.0
        beliefs[ent] = counts
    magnitude = float(1.0 - np.mean(probs)) if probs else 0.0
    # replace the sensed snapshot of every observed subject
    seen = {f.subject for f in obs}
    kept = {pf for pf in st.facts if codec.decode(pf).subject not in seen or not _is_sensed(codec.decode(pf), st.vocab)}
    facts = frozenset(kept | {codec.encode(f) for f in obs})
    return replace(st, beliefs=beliefs, facts=facts), PredictionError(magnitude, tuple(err_facts), "observation")


def _is_sensed(f: CanonicalFact, vocab: Vocabulary) -> bool:
    return vocab.name(f.predicate) in ("at", "kind")


def expect(st: ConcreteState, entity: str, cells: Iterable[Cell]) -> ConcreteState:
    """Register the predicted outcome of an issued motor command."""
    exp = dict(st.expectations)
    exp[entity] = tuple(sorted(cells))
    return replace(st, expectations=exp)


def check_expectations(st: ConcreteState, obs: Sequence[CanonicalFact]) -> tuple[ConcreteState, PredictionError | None]:
    """Compare motor predictions with what was sensed.

    A command predicts its outcome with probability ``MOTOR_CONFIDENCE``;
    the error is one minus the probability given to what actually happened.
    """
    if not st.expectations:
        return st, None
    at_id = st.vocab.id("at")
    pos = _positions(obs, at_id)
    errs = []
    for ent, cells in sorted(st.expectations.items()):
        seen = tuple(sorted(pos.get(ent, ())))
        if not seen:
            continue
        e = MOTOR_CONFIDENCE if seen == cells else 1.0 - MOTOR_CONFIDENCE
        errs.append((CanonicalFact(ent, at_id, cell_str(cells[0]), 1.0), 1.0 - e))
    st = replace(st, expectations={})
    if not errs:
        return st, None
    mag = float(np.mean([x for _, x in errs]))
    return st, PredictionError(mag, tuple(errs), "effect")


# local model of the world from the sensed view ------------------------------------
def local_world(st: ConcreteState, view: Sequence[CanonicalFact]) -> GridWorld:
    kind_id = st.vocab.id("kind")
    pos = _positions(view, st.vocab.id("at"))
    kinds = {f.subject: f.obj for f in view if f.predicate == kind_id}
    ents = {}
    for ent, cells in pos.items():
        k = kinds.get(ent)
        if k not in ("agent", "log", "tree"):
            continue
        cells = tuple(sorted(cells))
        if k == "log":
            orient = "vertical" if len({c[0] for c in cells}) == 1 and len(cells) > 1 else "horizontal"
            if len(cells) < 2:
                continue  # partially visible stub; cannot plan with it
            try:
                ents[ent] = Entity(ent, k, cells, orient)
            except ValueError:
                continue
        else:
            ents[ent] = Entity(ent, k, cells[:1])
    t = st.terrain
    return GridWorld(t.width, t.height, t.ravine, t.goal_cells, ents, dict(t.regions))


def _walkable(w: GridWorld, me: str, block_agents: bool, extra_blocked: Iterable[Cell] = ()) -> np.ndarray:
    grid = w.walkable_grid()
    for x, y in extra_blocked:
        grid[y, x] = False
    if block_agents:
        for a in w.agents():
            if a.id != me:
                grid[a.cell[1], a.cell[0]] = False
    return grid


def shortest_path(w: GridWorld, me: str, start: Cell, targets: Iterable[Cell],
                  extra_blocked: Iterable[Cell] = ()) -> list[Cell] | None:
    """Cells from start (exclusive) to the nearest target, tie-break N<E<S<W.

    Other agents are treated as obstacles unless that leaves no route.
    """
    targets = set(targets)
    if start in targets:
        return []
    extra = set(extra_blocked)
    for block in (True, False):
        grid = _walkable(w, me, block, extra)
        src = [(c[1], c[0]) for c in sorted(targets) if w.in_bounds(c) and grid[c[1], c[0]]]
        if not src:
            continue
        dist = _kernels.bfs_distances(grid, src)
        d = dist[start[1], start[0]]
        if d < 0:
            continue
        path = []
        cur = start
        while d > 0:
            for _, n in neighbours(cur):
                if w.in_bounds(n) and dist[n[1], n[0]] == d - 1:
                    cur = n
                    break
            path.append(cur)
            d -= 1
        return path
    return None


def _direction(a: Cell, b: Cell) -> str:
    for d in DIRS:
        if shift(a, d) == b:
            return d
    raise ValueError(f"{a} and {b} are not adjacent")


# units ----------------------------------------------------------------------------
@dataclass(frozen=True)
class UnitResult:
    action: AgentAction | None
    satisfied: bool = False
    stalled: bool = False
    plan: tuple[CanonicalFact, ...] = ()


def _is_self(st: ConcreteState, subject: str) -> bool:
    return subject == st.agent_id or subject in GROUP_SUBJECTS


def _fact_targets(w: GridWorld, obj: str) -> frozenset[Cell] | None:
    if obj in w.entities:
        return frozenset(w.entities[obj].cells)
    return w.region(obj)


class NavigationUnit:
    id = "navigation"
    predicates = ("go-to", "at")

    def accepts(self, st: ConcreteState, f: CanonicalFact) -> bool:
        return st.vocab.name(f.predicate) in self.predicates and _is_self(st, f.subject) \
            and (st.vocab.name(f.predicate) != "at" or parse_cell(f.obj) is not None)

    def run(self, st, w: GridWorld, facts: list[CanonicalFact]) -> UnitResult:
        me = w.entities.get(st.agent_id)
        if me is None:
            return UnitResult(None, stalled=True)
        targets: set[Cell] = set()
        for f in facts:
            t = _fact_targets(w, f.obj) if st.vocab.name(f.predicate) == "go-to" else {parse_cell(f.obj)}
            if t:
                targets |= set(t)
        if not targets:
            return UnitResult(None, stalled=True)
        path = shortest_path(w, st.agent_id, me.cell, targets)
        if path is None:
            return UnitResult(None, stalled=True)
        if not path:
            return UnitResult(None, satisfied=True)
        at = st.vocab.id("at")
        plan = tuple(CanonicalFact(st.agent_id, at, cell_str(c), 1.0) for c in path)
        return UnitResult(Move(_direction(me.cell, path[0])), plan=plan)


class ManipulationUnit:
    id = "manipulation"

    def accepts(self, st: ConcreteState, f: CanonicalFact) -> bool:
        name = st.vocab.name(f.predicate)
        if name in SPAN_PREDICATES:
            return not _is_self(st, f.subject)
        return name == "at" and not _is_self(st, f.subject) and parse_cell(f.obj) is not None

    def targets(self, st, w: GridWorld, facts: list[CanonicalFact]) -> dict[str, tuple[Cell, ...] | None]:
        out: dict[str, tuple[Cell, ...] | None] = {}
        at_cells: dict[str, set[Cell]] = {}
        for f in facts:
            log = w.entities.get(f.subject)
            if log is None or log.kind != "log":
                out.setdefault(f.subject, None)
                continue
            if st.vocab.name(f.predicate) == "at":
                at_cells.setdefault(f.subject, set()).add(parse_cell(f.obj))
            else:
                region = _fact_targets(w, f.obj)
                out[f.subject] = spanning_cells(w, log, region) if region else None
        for k, cells in at_cells.items():
            out[k] = tuple(sorted(cells))
        return out

    def run(self, st, w: GridWorld, facts: list[CanonicalFact]) -> UnitResult:
        me = w.entities.get(st.agent_id)
        tg = self.targets(st, w, facts)
        if me is None or not tg:
            return UnitResult(None, stalled=True)
        plan = []
        at = st.vocab.id("at")
        for log_id, target in sorted(tg.items()):
            if target is None:
                return UnitResult(None, stalled=True)
            log = w.entities[log_id]
            if tuple(sorted(log.cells)) == tuple(sorted(target)):
                continue
            plan.extend(CanonicalFact(log_id, at, cell_str(c), 1.0) for c in target)
            cur0, tgt0 = min(log.cells), min(target)
            dx, dy = tgt0[0] - cur0[0], tgt0[1] - cur0[1]
            if dx and dy:
                return UnitResult(None, stalled=True)
            d = "E" if dx > 0 else "W" if dx < 0 else "S" if dy > 0 else "N"
            cells = set(log.cells)
            front = {shift(c, d) for c in cells} - cells
            others = {a.cell for a in w.agents() if a.id != st.agent_id}
            grid = w.walkable_grid()
            spots = set()
            for c in cells:
                for _, n in neighbours(c):
                    if n in cells or n in front or n in others or not w.in_bounds(n):
                        continue
                    if grid[n[1], n[0]]:
                        spots.add(n)
            if me.cell in spots:
                return UnitResult(Push(log_id, d), plan=tuple(plan))
            path = shortest_path(w, st.agent_id, me.cell, spots, extra_blocked=cells)
            if not path:
                return UnitResult(None, stalled=True, plan=tuple(plan))
            return UnitResult(Move(_direction(me.cell, path[0])), plan=tuple(plan))
        return UnitResult(None, satisfied=True)


def vertical_space_unit(constraints: Iterable[tuple[str, str]], tokens: Iterable[str] = ()) -> dict[str, int]:
    """Minimal integer heights with upper > lower for every (upper, lower) pair."""
    below: dict[str, set[str]] = {t: set() for t in tokens}
    for up, low in constraints:
        below.setdefault(up, set()).add(low)
        below.setdefault(low, set())
    height: dict[str, int] = {}
    state: dict[str, int] = {}

    def visit(t):
        stack = [(t, iter(sorted(below[t])))]
        state[t] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                height[node] = 1 + max((height[b] for b in below[node]), default=-1)
                state[node] = 2
                stack.pop()
            elif state.get(nxt) == 1:
                raise CyclicConstraints(f"cycle through {nxt!r}")
            elif nxt not in state:
                state[nxt] = 1
                stack.append((nxt, iter(sorted(below[nxt]))))

    for t in sorted(below):
        if t not in state:
            visit(t)
    return dict(sorted(height.items()))


class VerticalSpaceUnit:
    id = "vertical-space"

    def run_payload(self, payload: tuple) -> dict[str, int]:
        constraints, tokens = payload
        return vertical_space_unit(constraints, tokens)


NAVIGATION = NavigationUnit()
MANIPULATION = ManipulationUnit()
VERTICAL = VerticalSpaceUnit()
MOTOR_UNITS = (NAVIGATION, MANIPULATION)


def _goal_items(st: ConcreteState) -> list[BlackboardItem]:
    return [i for i in st.blackboard if i.tag in ("goal", "plan_fragment")]


def dispatch(st: ConcreteState, w: GridWorld):
    """Yield (unit, item, facts) in (unit order, insertion order)."""
    for unit in MOTOR_UNITS:
        for item in _goal_items(st):
            facts = [f for f in st.item_facts(item) if unit.accepts(st, f)]
            if facts:
                yield unit, item, facts


def tick(st: ConcreteState, view: Sequence[CanonicalFact]) -> tuple[ConcreteState, AgentAction, list[dict]]:
    """One behaviour cycle: drop satisfied goal items, then act on the first unit that can."""
    events: list[dict] = []
    w = local_world(st, view)
    verdicts: dict[int, list[bool]] = {}
    chosen: AgentAction | None = None
    accepted = False
    for unit, item, facts in dispatch(st, w):
        accepted = True
        res = unit.run(st, w, facts)
        verdicts.setdefault(item.seq, []).append(res.satisfied)
        if res.action is not None and chosen is None:
            chosen = res.action
            events.append({"event": "dispatch", "unit": unit.id, "item": item.seq})
    done = {seq for seq, v in verdicts.items() if all(v)}
    if done:
        keep = tuple(i for i in st.blackboard if i.seq not in done or not _all_motor(st, i))
        st = replace(st, blackboard=keep)
    if st.pending_motor:
        head, rest = st.pending_motor[0], st.pending_motor[1:]
        return replace(st, pending_motor=rest), head, events
    if chosen is None:
        if accepted:
            events.append({"event": "stalled"})
        chosen = Wait()
    return st, chosen, events


def _all_motor(st: ConcreteState, item: BlackboardItem) -> bool:
    facts = st.item_facts(item)
    return all(any(u.accepts(st, f) for u in MOTOR_UNITS) for f in facts)


def generate_behavior(st: ConcreteState, view: Sequence[CanonicalFact]) -> AgentAction:
    return tick(st, view)[1]


def motor_expectation(st: ConcreteState, view: Sequence[CanonicalFact], action: AgentAction) -> ConcreteState:
    w = local_world(st, view)
    if isinstance(action, Move) and st.agent_id in w.entities:
        return expect(st, st.agent_id, [shift(w.entities[st.agent_id].cell, action.dir)])
    if isinstance(action, Push) and action.log in w.entities:
        return expect(st, action.log, [shift(c, action.dir) for c in w.entities[action.log].cells])
    return st


def plan_direct(st: ConcreteState, view: Sequence[CanonicalFact], goals: Iterable[CanonicalFact]
                ) -> tuple[frozenset[CanonicalFact], bool]:
    """Plan each goal with the motor units alone; unsolved if any goal has no taker."""
    w = local_world(st, view)
    plan: set[CanonicalFact] = set()
    solved = True
    for g in sorted_facts(goals):
        unit = next((u for u in MOTOR_UNITS if u.accepts(st, g)), None)
        if unit is None:
            solved = False
            continue
        res = unit.run(st, w, [g])
        if res.stalled:
            solved = False
        plan.update(res.plan)
    return frozenset(plan), solved


def blackboard_record(st: ConcreteState) -> list[dict]:
    out = []
    for item in st.blackboard:
        facts = [[f.subject, st.vocab.name(f.predicate), f.obj, f.confidence] for f in st.item_facts(item)]
        out.append({"seq": item.seq, "tag": item.tag, "producer": item.producer, "facts": facts})
    return out
