"""Deterministic gridworld for the log-bridge task."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .concepts import CanonicalFact, Vocabulary, sorted_facts

Cell = tuple[int, int]

DIRS = ("N", "E", "S", "W")
DELTA = {"N": (0, -1), "E": (1, 0), "S": (0, 1), "W": (-1, 0)}

JOINT_PUSH = 2

# predicate names the physical semantics understand
SPAN_PREDICATES = frozenset({"place", "across"})
REACH_PREDICATES = frozenset({"go-to", "walk", "on-top-of"})
GROUP_SUBJECTS = frozenset({"we"})


class WorldError(ValueError):
    pass


class InvalidAction(WorldError):
    pass


def cell_str(c: Cell) -> str:
    return f"{c[0]},{c[1]}"


def parse_cell(s: str) -> Cell | None:
    try:
        x, y = s.split(",")
        return int(x), int(y)
    except ValueError:
        return None


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def shift(c: Cell, d: str) -> Cell:
    dx, dy = DELTA[d]
    return (c[0] + dx, c[1] + dy)


def neighbours(c: Cell) -> list[tuple[str, Cell]]:
    return [(d, shift(c, d)) for d in DIRS]


@dataclass(frozen=True)
class Entity:
    id: str
    kind: str  # agent | log | tree
    cells: tuple[Cell, ...]
    orientation: str = "horizontal"

    def __post_init__(self):
        if self.kind not in ("agent", "log", "tree"):
            raise WorldError(f"unknown entity kind {self.kind!r}")
        if self.kind == "log":
            if not 2 <= len(self.cells) <= 4:
                raise WorldError(f"log {self.id} must span 2-4 cells")
            xs = sorted(c[0] for c in self.cells)
            ys = sorted(c[1] for c in self.cells)
            if self.orientation == "horizontal":
                ok = len(set(ys)) == 1 and xs == list(range(xs[0], xs[0] + len(xs)))
            else:
                ok = len(set(xs)) == 1 and ys == list(range(ys[0], ys[0] + len(ys)))
            if not ok:
                raise WorldError(f"log {self.id} cells are not contiguous and collinear")
        elif len(self.cells) != 1:
            raise WorldError(f"{self.kind} {self.id} must occupy one cell")

    @property
    def cell(self) -> Cell:
        return self.cells[0]


# actions --------------------------------------------------------------------
@dataclass(frozen=True)
class Move:
    dir: str


@dataclass(frozen=True)
class Push:
    log: str
    dir: str


@dataclass(frozen=True)
class Mime:
    payload: bytes


@dataclass(frozen=True)
class Wait:
    pass


AgentAction = Move | Push | Mime | Wait


def action_record(a: AgentAction) -> dict:
    if isinstance(a, Move):
        return {"act": "move", "dir": a.dir}
    if isinstance(a, Push):
        return {"act": "push", "log": a.log, "dir": a.dir}
    if isinstance(a, Mime):
        return {"act": "mime", "bytes": a.payload.hex()}
    return {"act": "wait"}


@dataclass
class ObservationEvent:
    kind: str
    agent: str
    data: dict = field(default_factory=dict)

    def record(self) -> dict:
        return {"event": self.kind, "agent": self.agent, **self.data}


# world ----------------------------------------------------------------------
@dataclass(frozen=True)
class GridWorld:
    width: int
    height: int
    ravine: frozenset[Cell]
    goal_cells: frozenset[Cell]
    entities: Mapping[str, Entity]
    regions: Mapping[str, frozenset[Cell]] = field(default_factory=dict)
    sensing_radius: int = 3
    step_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "entities", dict(sorted(self.entities.items())))
        object.__setattr__(self, "regions", {k: frozenset(v) for k, v in sorted(self.regions.items())})
        seen_logs: set[Cell] = set()
        for e in self.entities.values():
            for c in e.cells:
                if not self.in_bounds(c):
                    raise WorldError(f"{e.id} at {c} is out of bounds")
            if e.kind == "log":
                if seen_logs & set(e.cells):
                    raise WorldError(f"log {e.id} overlaps another log")
                seen_logs.update(e.cells)
        for a in self.agents():
            if a.cell in self.ravine and a.cell not in seen_logs:
                raise WorldError(f"agent {a.id} stands in the ravine")

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def agents(self) -> list[Entity]:
        return [e for e in self.entities.values() if e.kind == "agent"]

    def logs(self) -> list[Entity]:
        return [e for e in self.entities.values() if e.kind == "log"]

    def occupant_map(self) -> dict[Cell, list[str]]:
        occ: dict[Cell, list[str]] = {}
        for e in self.entities.values():
            for c in e.cells:
                occ.setdefault(c, []).append(e.id)
        return occ

    def log_cells(self) -> set[Cell]:
        return {c for e in self.logs() for c in e.cells}

    def tree_cells(self) -> set[Cell]:
        return {e.cell for e in self.entities.values() if e.kind == "tree"}

    def walkable(self, c: Cell, logs: set[Cell] | None = None, trees: set[Cell] | None = None) -> bool:
        if not self.in_bounds(c):
            return False
        logs = self.log_cells() if logs is None else logs
        trees = self.tree_cells() if trees is None else trees
        if c in trees:
            return False
        return c not in self.ravine or c in logs

    def walkable_grid(self) -> np.ndarray:
        """Boolean (height, width) map, ignoring agents."""
        grid = np.ones((self.height, self.width), dtype=np.bool_)
        for x, y in self.ravine:
            grid[y, x] = False
        for x, y in self.log_cells():
            grid[y, x] = True
        for x, y in self.tree_cells():
            grid[y, x] = False
        return grid

    def region(self, name: str) -> frozenset[Cell] | None:
        if name in self.regions:
            return self.regions[name]
        c = parse_cell(name)
        return frozenset({c}) if c is not None and self.in_bounds(c) else None

    def with_entity(self, e: Entity) -> "GridWorld":
        ents = dict(self.entities)
        ents[e.id] = e
        return replace(self, entities=ents)


def _adjacent(agent_cell: Cell, cells: Iterable[Cell]) -> bool:
    cells = set(cells)
    if agent_cell in cells:
        return False
    return any(n in cells for _, n in neighbours(agent_cell))


def step(w: GridWorld, actions: Mapping[str, AgentAction]) -> tuple[GridWorld, list[ObservationEvent]]:
    """Advance one tick. Mimes broadcast first, then pushes, then moves in agent-id order."""
    agents = {a.id: a for a in w.agents()}
    for aid in actions:
        if aid not in agents:
            raise WorldError(f"unknown agent {aid!r}")
    order = sorted(agents)
    acts = {aid: actions.get(aid, Wait()) for aid in order}
    events: list[ObservationEvent] = []
    ents = dict(w.entities)

    def reject(aid, reason, action):
        events.append(ObservationEvent("rejected", aid, {"reason": reason, **action_record(action)}))
        acts[aid] = Wait()

    for aid in order:
        a = acts[aid]
        if isinstance(a, Move) and a.dir not in DELTA:
            reject(aid, "bad_direction", a)
        elif isinstance(a, Push) and (a.dir not in DELTA or a.log not in ents or ents[a.log].kind != "log"):
            reject(aid, "bad_push", a)

    # mime broadcast
    for aid in order:
        a = acts[aid]
        if isinstance(a, Mime):
            src = agents[aid].cell
            heard = [o for o in order if o != aid and chebyshev(agents[o].cell, src) <= w.sensing_radius]
            events.append(ObservationEvent("mime_sent", aid, {"bytes": a.payload.hex(), "heard_by": heard}))
            for o in heard:
                events.append(ObservationEvent("mime", o, {"sender": aid, "bytes": a.payload.hex()}))

    # pushes
    pushers: dict[tuple[str, str], list[str]] = {}
    for aid in order:
        a = acts[aid]
        if isinstance(a, Push):
            if not _adjacent(agents[aid].cell, ents[a.log].cells):
                reject(aid, "not_adjacent", a)
                continue
            pushers.setdefault((a.log, a.dir), []).append(aid)
    moved_logs: set[str] = set()
    for (log_id, d) in sorted(pushers, key=lambda k: (k[0], DIRS.index(k[1]))):
        group = pushers[(log_id, d)]
        if len(group) < JOINT_PUSH:
            events.append(ObservationEvent("push_insufficient", group[0], {"log": log_id, "dir": d}))
            continue
        if log_id in moved_logs:
            events.append(ObservationEvent("push_conflict", group[0], {"log": log_id, "dir": d}))
            continue
        log = ents[log_id]
        new_cells = tuple(shift(c, d) for c in log.cells)
        others = {c for e in ents.values() if e.id != log_id for c in e.cells}
        agent_cells = {e.cell for e in ents.values() if e.kind == "agent"}
        if any(not w.in_bounds(c) or c in others for c in new_cells) or any(c in agent_cells for c in log.cells):
            events.append(ObservationEvent("push_blocked", group[0], {"log": log_id, "dir": d, "by": group}))
            continue
        ents[log_id] = replace(log, cells=new_cells)
        moved_logs.add(log_id)
        events.append(ObservationEvent("log_moved", group[0], {"log": log_id, "dir": d, "by": group}))

    # moves
    log_cells = {c for e in ents.values() if e.kind == "log" for c in e.cells}
    trees = w.tree_cells()
    for aid in order:
        a = acts[aid]
        if not isinstance(a, Move):
            continue
        cur = ents[aid].cell
        tgt = shift(cur, a.dir)
        if not w.in_bounds(tgt):
            reject(aid, "out_of_bounds", a)
            continue
        if not w.walkable(tgt, log_cells, trees):
            reject(aid, "blocked", a)
            continue
        if any(e.kind == "agent" and e.cell == tgt for e in ents.values()):
            reject(aid, "occupied", a)
            continue
        ents[aid] = replace(ents[aid], cells=(tgt,))
    nw = replace(w, entities=ents, step_count=w.step_count + 1)
    return nw, events


def sense(w: GridWorld, agent_id: str, radius: int, vocab: Vocabulary) -> list[CanonicalFact]:
    """Facts about entity cells within Chebyshev ``radius`` of the agent, sorted."""
    if agent_id not in w.entities:
        raise WorldError(f"unknown agent {agent_id!r}")
    at, kind = vocab.id("at"), vocab.id("kind")
    me = w.entities[agent_id].cell
    facts = []
    for e in w.entities.values():
        visible = [c for c in e.cells if chebyshev(c, me) <= radius]
        if not visible:
            continue
        facts.extend(CanonicalFact(e.id, at, cell_str(c), 1.0) for c in visible)
        facts.append(CanonicalFact(e.id, kind, e.kind, 1.0))
    return sorted_facts(facts)


def task_success(w: GridWorld) -> bool:
    return any(a.cell in w.goal_cells for a in w.agents())


# plan semantics ---------------------------------------------------------------
def spanning_offset(w: GridWorld, log: Entity, region: Iterable[Cell]) -> int | None:
    """Smallest shift along the log's axis after which it covers every region
    cell on its line; None if no in-bounds placement does."""
    horizontal = log.orientation == "horizontal"
    line = log.cells[0][1] if horizontal else log.cells[0][0]
    need = {c for c in region if (c[1] if horizontal else c[0]) == line}
    if not need:
        return None
    limit = w.width if horizontal else w.height
    best = None
    for k in sorted(range(-limit, limit + 1), key=lambda k: (abs(k), -k)):
        cells = {(c[0] + k, c[1]) if horizontal else (c[0], c[1] + k) for c in log.cells}
        if all(w.in_bounds(c) for c in cells) and need <= cells:
            best = k
            break
    return best


def spanning_cells(w: GridWorld, log: Entity, region: Iterable[Cell]) -> tuple[Cell, ...] | None:
    k = spanning_offset(w, log, region)
    if k is None:
        return None
    if log.orientation == "horizontal":
        return tuple((c[0] + k, c[1]) for c in log.cells)
    return tuple((c[0], c[1] + k) for c in log.cells)


def _someone_in(w: GridWorld, subject: str, cells: Iterable[Cell]) -> bool:
    cells = set(cells)
    if subject in GROUP_SUBJECTS:
        return any(a.cell in cells for a in w.agents())
    e = w.entities.get(subject)
    return e is not None and any(c in cells for c in e.cells)


def _target_cells(w: GridWorld, obj: str) -> frozenset[Cell] | None:
    if obj in w.entities:
        return frozenset(w.entities[obj].cells)
    return w.region(obj)


def fact_holds(w: GridWorld, f: CanonicalFact, vocab: Vocabulary) -> bool:
    name = vocab.name(f.predicate) if f.predicate in vocab else ""
    if name == "at":
        e = w.entities.get(f.subject)
        c = parse_cell(f.obj)
        return e is not None and c in e.cells
    if name in SPAN_PREDICATES:
        log = w.entities.get(f.subject)
        region = _target_cells(w, f.obj)
        return log is not None and log.kind == "log" and region is not None and spanning_offset(w, log, region) == 0
    if name in REACH_PREDICATES:
        cells = _target_cells(w, f.obj)
        if cells is None:
            return False
        if name != "go-to" and _someone_in(w, f.subject, w.goal_cells):
            return True
        return _someone_in(w, f.subject, cells)
    if f.predicate == vocab.purpose:
        cells = _target_cells(w, f.obj)
        return cells is not None and any(a.cell in cells for a in w.agents())
    return False


def plan_distance(w: GridWorld, facts: Iterable[CanonicalFact], vocab: Vocabulary) -> int:
    """Unsatisfied fact count plus the remaining shift of every log a span fact targets."""
    total = 0
    shifts: dict[str, int] = {}
    for f in facts:
        if fact_holds(w, f, vocab):
            continue
        total += 1
        name = vocab.name(f.predicate) if f.predicate in vocab else ""
        log = w.entities.get(f.subject)
        region = _target_cells(w, f.obj)
        if name in SPAN_PREDICATES and log is not None and log.kind == "log" and region is not None:
            k = spanning_offset(w, log, region)
            if k is not None:
                shifts[f.subject] = abs(k)
    return total + sum(shifts.values())


def build_world(spec: Mapping) -> GridWorld:
    """World from the ``grid``/``entities`` sections of a scenario mapping."""
    grid = spec["grid"]
    ents = {}
    for e in spec["entities"]:
        cells = tuple(tuple(c) for c in e["cells"])
        ents[e["id"]] = Entity(e["id"], e["kind"], cells, e.get("orientation", "horizontal"))
    ravine = frozenset(tuple(c) for c in grid["ravine"])
    goals = frozenset(tuple(c) for c in grid["goal"])
    regions = {k: frozenset(tuple(c) for c in v) for k, v in grid.get("regions", {}).items()}
    regions.setdefault("ravine", ravine)
    return GridWorld(
        grid["width"], grid["height"], ravine, goals, ents, regions,
        sensing_radius=int(spec.get("sensing_radius", 3)),
    )
