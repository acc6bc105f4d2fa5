"""An agent bundles its private lower state, its abstract model and its concept inventory."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .concepts import CanonicalFact, Vocabulary
from .lower import (
    ConcreteState, PredictionError, PrivateCodec, StaticMap, check_expectations, deposit, motor_expectation, new_state,
    observe, tick,
)
from .params import Params
from .upper import (
    AbstractModel, Idea, PerspectiveModel, knowledge_facts, new_abstract_model, peer_perspective, select_idea,
    self_perspective, update_abstract,
)
from .world import AgentAction


@dataclass(frozen=True)
class Agent:
    id: str
    vocab: Vocabulary
    known: frozenset[int]
    lower: ConcreteState
    upper: AbstractModel
    params: Params = Params()

    @property
    def self_view(self) -> PerspectiveModel:
        return self_perspective(self.vocab, self.known)

    def perspective(self, peer: str) -> PerspectiveModel:
        p = self.upper.perspectives.get(peer)
        return p if p is not None else peer_perspective(peer)

    def with_perspective(self, p: PerspectiveModel) -> "Agent":
        ps = dict(self.upper.perspectives)
        ps[p.peer] = p
        return replace(self, upper=replace(self.upper, perspectives=ps))


def make_agent(agent_id: str, vocab: Vocabulary, codec_seed: int, terrain: StaticMap, *,
               known: Iterable[int] | None = None, goals: Sequence[CanonicalFact] = (),
               priors: Mapping[str, Mapping[int, float]] | None = None, params: Params = Params()) -> Agent:
    """Fresh agent; ``goals`` are deposited as one goal item, ``priors`` are per-peer concept probabilities."""
    known_ids = frozenset(vocab.content_ids() if known is None else known) | {vocab.seq, vocab.purpose}
    lower = new_state(agent_id, PrivateCodec(codec_seed), vocab, terrain, params.prior_count)
    if goals:
        lower = deposit(lower, "goal", goals, producer="config")
    perspectives = {peer: peer_perspective(peer, pr) for peer, pr in sorted((priors or {}).items())}
    return Agent(agent_id, vocab, known_ids, lower, new_abstract_model(vocab, perspectives), params)


@dataclass(frozen=True)
class Perception:
    errors: tuple[PredictionError, ...]
    surprises: tuple[PredictionError, ...]


def perceive(agent: Agent, view: Sequence[CanonicalFact]) -> tuple[Agent, Perception]:
    """Sense, compare motor predictions, and route errors to the abstract model."""
    lower, eff = check_expectations(agent.lower, view)
    lower, obs = observe(lower, view)
    upper = agent.upper
    errors, surprises = [], []
    for err in (e for e in (eff, obs) if e is not None and e.magnitude > 0):
        upper, surprised = update_abstract(upper, err, agent.vocab, agent.params.surprise_threshold)
        errors.append(err)
        if surprised:
            surprises.append(err)
    return replace(agent, lower=lower, upper=upper), Perception(tuple(errors), tuple(surprises))


def act(agent: Agent, view: Sequence[CanonicalFact]) -> tuple[Agent, AgentAction, list[dict]]:
    lower, action, events = tick(agent.lower, view)
    lower = motor_expectation(lower, view, action)
    return replace(agent, lower=lower), action, events


def trigger_fact(agent: Agent, err: PredictionError) -> CanonicalFact | None:
    """First knowledge fact that mentions an entity the error is about."""
    ents = {x for f, _ in err.facts for x in (f.subject, f.obj)} - {""}
    for f in knowledge_facts(agent.lower):
        if f.subject in ents or f.obj in ents:
            return f
    return None


def focus_on(agent: Agent, trigger: CanonicalFact) -> tuple[Agent, Idea]:
    idea = select_idea(agent.lower, trigger, agent.params.idea_cap)
    return replace(agent, upper=replace(agent.upper, current_focus=idea)), idea
