"""Mime-based encounter protocol with failure-driven refinement of the sender's peer model."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from .agent import Agent
from .concepts import ConceptError, Explanation, MalformedMime, deserialize_explanation, serialize_explanation
from .lower import deposit
from .upper import (
    Idea, NoCandidates, cache_fragment, concretize, least_primitive, select_explanation_scored,
)
from .world import GridWorld, Mime, chebyshev, plan_distance


class ProtocolError(RuntimeError):
    pass


class OutOfRange(RuntimeError):
    pass


class Phase(str, enum.Enum):
    IDLE = "idle"
    EXPLAINING = "explaining"
    OBSERVING = "observing"
    REFINING = "refining"
    DONE = "done"
    FAILED = "failed"


EVENTS = ("surprise", "transmit", "progress", "timeout", "exhausted", "explain")

TRANSITIONS: dict[tuple[Phase, str], Phase] = {
    (Phase.IDLE, "surprise"): Phase.EXPLAINING,
    (Phase.EXPLAINING, "transmit"): Phase.OBSERVING,
    (Phase.OBSERVING, "progress"): Phase.DONE,
    (Phase.OBSERVING, "timeout"): Phase.REFINING,
    (Phase.OBSERVING, "exhausted"): Phase.FAILED,
    (Phase.REFINING, "explain"): Phase.EXPLAINING,
}


@dataclass(frozen=True)
class DialogState:
    sender: str
    receiver: str
    phase: Phase = Phase.IDLE
    round: int = 0
    last_explanation: Explanation | None = None
    failure_budget: int = 4
    initial_budget: int = 4
    idea: Idea | None = None
    baseline: int | None = None  # plan distance when the current mime went out
    sent_at: int | None = None

    def __post_init__(self):
        if not 0 <= self.round <= self.initial_budget:
            raise ProtocolError(f"round {self.round} outside [0, {self.initial_budget}]")

    @property
    def closed(self) -> bool:
        return self.phase in (Phase.DONE, Phase.FAILED)


def new_dialog(sender: str, receiver: str, failure_budget: int = 4) -> DialogState:
    return DialogState(sender, receiver, failure_budget=failure_budget, initial_budget=failure_budget)


def advance(d: DialogState, event: str) -> DialogState:
    """Apply one protocol event; anything off the phase graph is a ProtocolError."""
    nxt = TRANSITIONS.get((d.phase, event))
    if nxt is None:
        raise ProtocolError(f"event {event!r} is illegal in phase {d.phase.value}")
    if event == "timeout":
        if d.failure_budget <= 0:
            raise ProtocolError("no failure budget left; use 'exhausted'")
        return replace(d, phase=nxt, round=d.round + 1, failure_budget=d.failure_budget - 1)
    if event == "exhausted" and d.failure_budget > 0:
        raise ProtocolError("failure budget remains; use 'timeout'")
    return replace(d, phase=nxt)


# sender side ------------------------------------------------------------------------
def begin(sender: Agent, d: DialogState, idea: Idea, search_log: list | None = None
          ) -> tuple[DialogState, Explanation]:
    """idle -> explaining with an explanation chosen for the receiver."""
    if d.phase is not Phase.IDLE:
        raise ProtocolError(f"dialog already {d.phase.value}")
    e = explain_for(sender, d.receiver, idea, search_log)
    return replace(advance(d, "surprise"), idea=idea, last_explanation=e), e


def explain_for(sender: Agent, receiver: str, idea: Idea, search_log: list | None = None) -> Explanation:
    """Best explanation for ``receiver``; ranked (candidate, score) pairs go to ``search_log`` if given."""
    p = sender.params
    return select_explanation_scored(
        sender.upper, idea, sender.perspective(receiver), sender.vocab, lam=p.lam, beam_width=p.beam_width,
        max_clauses=p.max_clauses, threshold=p.concept_threshold, trace=search_log,
    )[0]


def transmit(sender: Agent, world: GridWorld, d: DialogState) -> tuple[Mime, DialogState, dict]:
    """Emit the pending explanation as a mime; the receiver must be within broadcast range."""
    if d.phase is not Phase.EXPLAINING or d.last_explanation is None:
        raise ProtocolError("nothing to transmit")
    a, b = world.entities.get(d.sender), world.entities.get(d.receiver)
    if a is None or b is None or chebyshev(a.cell, b.cell) > world.sensing_radius:
        raise OutOfRange(f"{d.receiver} is not within {world.sensing_radius} cells of {d.sender}")
    payload = serialize_explanation(d.last_explanation)
    nd = replace(advance(d, "transmit"), baseline=plan_distance(world, d.idea.facts, sender.vocab),
                 sent_at=world.step_count)
    return Mime(payload), nd, {"event": "transmit", "round": d.round, "bytes": payload.hex(),
                              "clauses": len(d.last_explanation)}


def evaluate_and_refine(sender: Agent, d: DialogState, world: GridWorld, window: int | None = None,
                        search_log: list | None = None) -> tuple[Agent, DialogState, dict | None]:
    """Check for behavioural progress since the mime and refine the peer model on timeout.

    Progress means the plan distance of the idea fell below its value at
    transmission. After ``window`` steps without it the sender lowers its
    estimate of the least primitive concept it used and explains again.
    """
    if d.phase is not Phase.OBSERVING:
        raise ProtocolError("evaluate_and_refine needs an observing dialog")
    window = sender.params.failure_window if window is None else window
    dist = plan_distance(world, d.idea.facts, sender.vocab)
    if dist < d.baseline:
        return sender, advance(d, "progress"), {"event": "outcome", "round": d.round, "outcome": "done",
                                                "distance": dist}
    if world.step_count - d.sent_at < window:
        return sender, d, None
    if d.failure_budget <= 0:
        return sender, advance(d, "exhausted"), {"event": "outcome", "round": d.round, "outcome": "failed",
                                                 "distance": dist}
    p = sender.perspective(d.receiver)
    target = least_primitive(d.last_explanation, sender.vocab, p)
    old = p.prob(target)
    sender = sender.with_perspective(p.with_prob(target, old * sender.params.refine_factor))
    d = advance(d, "timeout")
    rec = {"event": "refine", "round": d.round, "concept": sender.vocab.name(target), "from": old,
           "to": old * sender.params.refine_factor}
    try:
        e = explain_for(sender, d.receiver, d.idea, search_log)
    except NoCandidates:
        e = d.last_explanation
    return sender, replace(advance(d, "explain"), last_explanation=e), rec


# receiver side ----------------------------------------------------------------------
def ingest(receiver: Agent, payload: bytes, sender: str = "") -> tuple[Agent, dict]:
    """Store the mime opaquely, then interpret it and plant goals from what it means to us.

    Concepts the receiver lacks contribute nothing. A malformed payload only
    leaves the opaque observation behind.
    """
    lower = deposit(receiver.lower, "observation", (("mime", sender, bytes(payload)),), producer="sensor")
    try:
        e = deserialize_explanation(bytes(payload))
        receiver.vocab.validate_explanation(e, max_clauses=None)
    except (MalformedMime, ConceptError) as exc:
        return replace(receiver, lower=lower), {"event": "ingest", "ok": False, "error": str(exc)}
    facts = concretize(e, receiver.self_view, receiver.vocab, receiver.params.concept_threshold)
    if facts:
        lower = deposit(lower, "goal", sorted(facts, key=lambda f: f.sort_key()), producer="upper")
    upper = cache_fragment(receiver.upper, e)
    return replace(receiver, lower=lower, upper=upper), {"event": "ingest", "ok": True, "goals": len(facts)}
