from collections import deque
from dataclasses import replace

import numpy as np
import pytest

from gen import random_explanation, random_vocab
from sharedint.agent import make_agent
from sharedint.concepts import CanonicalFact, composite_concepts, deserialize_explanation, serialize_explanation
from sharedint.dialog import (
    OutOfRange, Phase, ProtocolError, advance, begin, evaluate_and_refine, ingest, new_dialog, transmit,
)
from sharedint.harness import run_episode
from sharedint.lower import StaticMap
from sharedint.upper import Idea, concretize, knowledge_facts
from sharedint.world import Entity, build_world

# the phase graph, written out independently of the implementation
ALLOWED = {
    ("idle", "explaining"), ("explaining", "observing"), ("observing", "done"), ("observing", "refining"),
    ("observing", "failed"), ("refining", "explaining"),
}
ALL_EVENTS = ("surprise", "transmit", "progress", "timeout", "exhausted", "explain", "bogus")


def story(v):
    F = lambda s, p, o: CanonicalFact(s, v.id(p), o, 1.0)
    return Idea(frozenset({F("L1", "place", "ravine"), F("L1", "across", "ravine"), F("we", "walk", "L1"),
                           F("we", "on-top-of", "L1"), F("we", "go-to", "east-bank"),
                           F("L1", "in-order-to", "east-bank")}))


def ref_world(cfg, **agents):
    w = build_world({"grid": cfg.grid, "entities": list(cfg.entities)})
    for aid, c in agents.items():
        w = w.with_entity(Entity(aid, "agent", (c,)))
    return w


def alice_bob(cfg, v):
    alice = make_agent("alice", v, 1, StaticMap(9, 7), priors={"bob": {v.id("bridge"): 1.0}})
    bob = make_agent("bob", v, 2, StaticMap(9, 7), known=[v.id(n) for n in cfg.agents[1]["known"]])
    return alice, bob


class TestPhaseGraph:
    @pytest.mark.parametrize("budget", [0, 1, 2, 3])
    def test_every_event_order_stays_on_graph(self, budget):
        start = new_dialog("a", "b", budget)
        seen = {(start.phase, start.round, start.failure_budget)}
        q = deque([start])
        edges = set()
        while q:
            d = q.popleft()
            for ev in ALL_EVENTS:
                try:
                    d2 = advance(d, ev)
                except ProtocolError:
                    continue
                edges.add((d.phase.value, d2.phase.value))
                assert (d.phase.value, d2.phase.value) in ALLOWED
                assert d2.round - d.round == (ev == "timeout")
                assert 0 <= d2.failure_budget <= budget
                key = (d2.phase, d2.round, d2.failure_budget)
                if key not in seen:
                    seen.add(key)
                    q.append(d2)
        want = set(ALLOWED) if budget else ALLOWED - {("observing", "refining"), ("refining", "explaining")}
        assert edges == want
        assert max(r for _, r, _ in seen) == budget

    @pytest.mark.parametrize("phase", ["done", "failed"])
    def test_terminal_absorbing(self, phase):
        d = replace(new_dialog("a", "b"), phase=Phase(phase))
        for ev in ALL_EVENTS:
            with pytest.raises(ProtocolError):
                advance(d, ev)

    def test_exhausted_only_at_zero_budget(self):
        d = replace(new_dialog("a", "b", 1), phase=Phase.OBSERVING)
        with pytest.raises(ProtocolError):
            advance(d, "exhausted")
        d = advance(advance(advance(d, "timeout"), "explain"), "transmit")
        assert d.failure_budget == 0 and advance(d, "exhausted").phase is Phase.FAILED
        with pytest.raises(ProtocolError):
            advance(d, "timeout")


class TestTransmit:
    def test_in_range(self, reference, ref_vocab):
        alice, _ = alice_bob(reference, ref_vocab)
        d, e = begin(alice, new_dialog("alice", "bob"), story(ref_vocab))
        mime, d2, rec = transmit(alice, ref_world(reference, alice=(1, 2), bob=(2, 4)), d)
        assert deserialize_explanation(mime.payload) == e
        assert d2.phase is Phase.OBSERVING and rec["clauses"] == len(e)

    def test_out_of_range(self, reference, ref_vocab):
        alice, _ = alice_bob(reference, ref_vocab)
        d, _ = begin(alice, new_dialog("alice", "bob"), story(ref_vocab))
        with pytest.raises(OutOfRange):
            transmit(alice, ref_world(reference, alice=(0, 0), bob=(0, 6)), d)

    def test_nothing_pending(self, reference, ref_vocab):
        alice, _ = alice_bob(reference, ref_vocab)
        with pytest.raises(ProtocolError):
            transmit(alice, ref_world(reference, alice=(0, 0), bob=(0, 1)), new_dialog("alice", "bob"))


class TestIngest:
    def test_matches_concretize(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            v = random_vocab(rng)
            known = [c for c in v.content_ids() if rng.integers(3)]
            rcv = make_agent("r", v, seed, StaticMap(3, 3), known=known)
            e = random_explanation(rng, v)
            rcv2, rec = ingest(rcv, serialize_explanation(e), "s")
            want = concretize(e, rcv.self_view, v)
            assert rec["ok"] and rec["goals"] == len(want)
            assert set(knowledge_facts(rcv2.lower)) == set(want)
            assert rcv2.upper.cached_fragments[-1] == (e, 1)

    def test_malformed_leaves_only_observation(self, ref_vocab):
        rcv = make_agent("r", ref_vocab, 5, StaticMap(3, 3))
        rcv2, rec = ingest(rcv, b"\x01\x05", "s")
        assert not rec["ok"]
        assert [i.tag for i in rcv2.lower.blackboard] == ["observation"]
        assert rcv2.upper is rcv.upper

    def test_unknown_concept_id_rejected(self, ref_vocab):
        rcv = make_agent("r", ref_vocab, 5, StaticMap(3, 3))
        raw = bytes([1, 1, 0, 200, 0, 5, 0, 0xFF, 0xFF, 0xFF, 0xFF, 0, 0])
        _, rec = ingest(rcv, raw, "s")
        assert not rec["ok"]


def scripted_round_trip(reference, v, window=3):
    """Drive the dialog by hand: the world moves only once the receiver understands the whole idea."""
    alice, bob = alice_bob(reference, v)
    idea = story(v)
    world = ref_world(reference, alice=(1, 2), bob=(2, 4))
    d, _ = begin(alice, new_dialog("alice", "bob", 4), idea)
    sent, refines = [], []
    while not d.closed:
        mime, d, _ = transmit(alice, world, d)
        sent.append(deserialize_explanation(mime.payload))
        got = concretize(sent[-1], bob.self_view, v)
        if idea.facts <= got:
            world = world.with_entity(Entity("L1", "log", ((2, 3), (3, 3), (4, 3))))
        for _ in range(window + 1):
            world = replace(world, step_count=world.step_count + 1)
            alice, d, rec = evaluate_and_refine(alice, d, world, window)
            if rec is not None:
                if rec["event"] == "refine":
                    refines.append(rec)
                break
    return d, sent, refines, alice


class TestRefinement:
    def test_bridge_prior_drops_then_expanded_form(self, reference, ref_vocab):
        v = ref_vocab
        d, sent, refines, alice = scripted_round_trip(reference, v)
        assert v.id("bridge") in sent[0].concepts()
        assert refines[0]["concept"] == "bridge" and (refines[0]["from"], refines[0]["to"]) == (1.0, 0.25)
        assert alice.perspective("bob").prob(v.id("bridge")) == 0.25
        assert d.phase is Phase.DONE and d.round <= 2
        assert not composite_concepts(sent[-1], v) and len(sent[-1]) == 3

    def test_refinement_strictly_lowers_estimate(self, reference, ref_vocab):
        v = ref_vocab
        alice, _ = alice_bob(reference, v)
        world = ref_world(reference, alice=(1, 2), bob=(2, 4))
        d, _ = begin(alice, new_dialog("alice", "bob", 3), story(v))
        probs = []
        while not d.closed:
            _, d, _ = transmit(alice, world, d)
            world = replace(world, step_count=world.step_count + 5)
            before = dict(alice.perspective("bob").known_concepts)
            alice, d, rec = evaluate_and_refine(alice, d, world, 5)
            if rec["event"] == "refine":
                after = alice.perspective("bob").known_concepts
                changed = [c for c in after if after[c] != before.get(c, 1.0)]
                assert len(changed) == 1 and after[changed[0]] < before.get(changed[0], 1.0)
                probs.append(after[changed[0]])
        assert d.phase is Phase.FAILED and d.round == 3 and len(probs) == 3

    def test_waits_inside_window(self, reference, ref_vocab):
        alice, _ = alice_bob(reference, ref_vocab)
        world = ref_world(reference, alice=(1, 2), bob=(2, 4))
        d, _ = begin(alice, new_dialog("alice", "bob"), story(ref_vocab))
        _, d, _ = transmit(alice, world, d)
        _, d2, rec = evaluate_and_refine(alice, d, replace(world, step_count=3), 10)
        assert rec is None and d2 == d


def test_end_to_end_fidelity(reference):
    res = run_episode(reference, 0)
    assert res.metrics["success"] and res.metrics["dialog_phase"] == "done"
    assert res.metrics["final_divergence"] == pytest.approx(0.3)  # three clauses, nothing missing
    assert res.metrics["dialog_rounds"] <= 2
