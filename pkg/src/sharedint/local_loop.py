"""Deliberation as a conversation with oneself.

The agent explains a goal to itself, concretizes the explanation onto its
own blackboard and lets the lower units (directly, or through a metaphor
into another unit's domain) work out a plan.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .agent import Agent
from .concepts import CanonicalFact, Explanation, Vocabulary, sorted_facts
from .lower import (
    MOTOR_UNITS, VERTICAL, ConcreteState, CyclicConstraints, deposit, local_world, plan_direct,
)
from .upper import Idea, PerspectiveModel, cache_fragment, concretize, divergence, select_explanation
from .world import GROUP_SUBJECTS, GridWorld, REACH_PREDICATES, fact_holds, parse_cell


class BudgetExhausted(RuntimeError):
    """Raised by ``deliberate(strict=True)`` when the loop runs out of iterations."""


@dataclass(frozen=True)
class MetaphorMapping:
    """Source-domain predicates read as (upper, lower) constraints of the vertical-space unit."""

    id: str
    source: frozenset[str]
    unit: str = "vertical-space"

    def accepts(self, f: CanonicalFact, v: Vocabulary) -> bool:
        return f.predicate in v and v.name(f.predicate) in self.source

    def forward(self, facts: Iterable[CanonicalFact], v: Vocabulary) -> tuple[tuple, tuple]:
        pairs = sorted({(f.subject, f.obj) for f in facts if self.accepts(f, v)})
        tokens = sorted({t for p in pairs for t in p})
        return tuple(pairs), tuple(tokens)

    def backward(self, heights: dict[str, int], predicate: int) -> frozenset[CanonicalFact]:
        """Every ordering the heights imply, as source-domain facts."""
        return frozenset(
            CanonicalFact(u, predicate, w, 1.0)
            for u, hu in heights.items() for w, hw in heights.items() if hu > hw
        )


HIERARCHY = MetaphorMapping("hierarchy-as-height", frozenset({"dominates"}))


@dataclass(frozen=True)
class Deliberation:
    plan: frozenset[CanonicalFact]
    solved: bool
    agent: Agent
    iterations: int
    trace: tuple[dict, ...] = field(default_factory=tuple)


def _achieved(f: CanonicalFact, w: GridWorld, plan: frozenset[CanonicalFact], known: set, v: Vocabulary,
              me: str = "") -> bool:
    if f.key in known or any(p.key == f.key for p in plan):
        return True
    if fact_holds(w, f, v):
        return True
    name = v.name(f.predicate) if f.predicate in v else ""
    if name in REACH_PREDICATES | {"at"}:
        if name == "at":
            targets = {parse_cell(f.obj)}
        elif f.obj in w.entities:
            targets = set(w.entities[f.obj].cells)
        else:
            targets = set(w.region(f.obj) or ())
        at = v.id("at")
        movers = {f.subject, me} if f.subject in GROUP_SUBJECTS else {f.subject}
        return any(p.predicate == at and p.subject in movers and parse_cell(p.obj) in targets for p in plan)
    return False


def _metaphor_pass(st: ConcreteState, facts: list[CanonicalFact], mapping: MetaphorMapping,
                   known_facts: Sequence[CanonicalFact]) -> tuple[ConcreteState, frozenset[CanonicalFact], dict]:
    """Send the mapped constraints to the vertical unit and translate its answer back."""
    v = st.vocab
    pred = facts[0].predicate
    constraints, tokens = mapping.forward(list(known_facts) + facts, v)
    st = deposit(st, "metaphor_request", ((constraints, tokens),), producer=mapping.id)
    heights = VERTICAL.run_payload((constraints, tokens))
    st = deposit(st, "metaphor_result", (tuple(sorted(heights.items())),), producer=VERTICAL.id)
    subjects = {f.subject for f in facts}
    derived = frozenset(f for f in mapping.backward(heights, pred) if f.subject in subjects)
    return st, derived, {"event": "metaphor", "mapping": mapping.id, "constraints": len(constraints),
                         "heights": dict(heights)}


def deliberate(agent: Agent, goal: Idea, budget: int = 8, view: Sequence[CanonicalFact] | None = None,
               mappings: Sequence[MetaphorMapping] = (HIERARCHY,), strict: bool = False) -> Deliberation:
    """Run the local loop until the goal is covered, nothing new appears, or ``budget`` runs out."""
    if not goal.facts:
        raise ValueError("goal must not be empty")
    v = agent.vocab
    view = [f for f in agent.lower.decoded() if v.name(f.predicate) in ("at", "kind")] if view is None else list(view)
    w = local_world(agent.lower, view)
    st = agent.lower
    upper = agent.upper
    me = agent.self_view
    known = {f.key for f in st.decoded()}
    known_facts = st.decoded()
    plan: frozenset[CanonicalFact] = frozenset()
    trace: list[dict] = []
    pending = [f for f in sorted_facts(goal.facts) if not _achieved(f, w, plan, known, v, agent.id)]
    it = 0
    while pending and it < budget:
        it += 1
        e = select_explanation(upper, Idea(frozenset(pending)), me, v, lam=agent.params.lam,
                               beam_width=agent.params.beam_width, max_clauses=agent.params.max_clauses,
                               threshold=agent.params.concept_threshold)
        facts = sorted_facts(concretize(e, me, v, agent.params.concept_threshold))
        st = deposit(st, "goal", facts, producer="local-loop")
        upper = cache_fragment(upper, e)
        rec = {"event": "deliberate", "iteration": it, "clauses": len(e), "facts": len(facts), "units": []}
        motor = [f for f in facts if any(u.accepts(st, f) for u in MOTOR_UNITS)]
        new_plan = set()
        if motor:
            p, _ = plan_direct(st, view, motor)
            new_plan |= p
            rec["units"].append("motor")
        for m in mappings:
            mapped = [f for f in facts if m.accepts(f, v)]
            if not mapped:
                continue
            try:
                st, derived, mrec = _metaphor_pass(st, mapped, m, [f for f in known_facts if m.accepts(f, v)])
            except CyclicConstraints as exc:
                rec["units"].append(f"{m.unit}:cyclic")
                trace.append({**rec, "error": str(exc)})
                return _finish(agent, st, upper, plan, False, it, trace, strict)
            new_plan |= derived
            rec["units"].append(m.unit)
            trace.append(mrec)
        trace.append(rec)
        before = len(pending)
        plan = plan | frozenset(new_plan)
        pending = [f for f in pending if not _achieved(f, w, plan, known, v, agent.id)]
        if len(pending) == before:
            break
    return _finish(agent, st, upper, plan, not pending, it, trace, strict)


def _finish(agent, st, upper, plan, solved, it, trace, strict) -> Deliberation:
    if strict and not solved:
        raise BudgetExhausted(f"goal not reached after {it} iteration(s)")
    return Deliberation(plan, solved, replace(agent, lower=st, upper=upper), it, tuple(trace))


def solo_deliberate(agent: Agent, goal: Idea, budget: int = 8, view: Sequence[CanonicalFact] | None = None,
                    mappings: Sequence[MetaphorMapping] = (HIERARCHY,)) -> tuple[frozenset[CanonicalFact], bool]:
    """Plan for ``goal`` by self-explanation; unsolved goals come back with ``solved=False``."""
    d = deliberate(agent, goal, budget, view, mappings)
    return d.plan, d.solved


def counterfactual_eval(agent: Agent, e: Explanation, hypothetical: PerspectiveModel,
                        idea: Idea | None = None) -> float:
    """How far ``hypothetical``'s concretion of ``e`` would land from the idea; mutates nothing."""
    idea = agent.upper.current_focus if idea is None else idea
    if idea is None:
        raise ValueError("no idea in focus")
    agent.vocab.validate_explanation(e, max_clauses=None)
    got = concretize(e, hypothetical, agent.vocab, agent.params.concept_threshold)
    return divergence(got, idea.facts, len(e), agent.params.lam)


def lower_only(st: ConcreteState, view: Sequence[CanonicalFact], goal: Idea) -> tuple[frozenset[CanonicalFact], bool]:
    """Direct lower-system planning with no abstraction, for paired comparisons."""
    return plan_direct(st, view, goal.facts)


def hierarchy_problem(members: Sequence[str], dominance: Iterable[tuple[str, str]], me: str = "self",
                      codec_seed: int = 0) -> tuple[Agent, Idea]:
    """An agent that knows who dominates whom and wants to dominate everyone.

    Nothing in the motor units handles ``dominates``; only the vertical-space
    unit, reached through ``HIERARCHY``, can order the group.
    """
    from .agent import make_agent
    from .concepts import make_vocabulary
    from .lower import StaticMap

    names = sorted(set(members) | {me})
    spec = [("then", "connector"), ("in-order-to", "connector"), ("at", "relation"), ("kind", "relation"),
            ("dominates", "action")] + [(n, "object") for n in names]
    v = make_vocabulary(spec)
    dom = v.id("dominates")
    known = [CanonicalFact(a, dom, b, 1.0) for a, b in sorted(set(dominance))]
    agent = make_agent(me, v, codec_seed, StaticMap(1, 1))
    if known:
        agent = replace(agent, lower=deposit(agent.lower, "plan_fragment", known, producer="config"))
    goal = Idea(frozenset(CanonicalFact(me, dom, x, 1.0) for x in names if x != me))
    return agent, goal
