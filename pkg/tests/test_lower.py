from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from sharedint.agent import make_agent, perceive
from sharedint.concepts import CanonicalFact
from sharedint.lower import (
    MOTOR_CONFIDENCE, NAVIGATION, CyclicConstraints, ForeignEncoding, PrivateCodec, StaticMap, check_expectations,
    deposit, expect, generate_behavior, inject_raw, local_world, new_state, observe, plan_direct, raw_facts, tick,
    vertical_space_unit,
)
from sharedint.world import Entity, GridWorld, Move, Push, Wait, build_world, cell_str, sense

tokens = st.text(alphabet="abcdefxyz0123456789,-", max_size=8)
facts = st.builds(CanonicalFact, tokens, st.integers(0, 30), tokens, st.floats(0, 1))


def distinct_codecs(rng):
    a = PrivateCodec(int(rng.integers(2**63)))
    while True:
        b = PrivateCodec(int(rng.integers(2**63)))
        if b.codec_id != a.codec_id:
            return a, b


class TestCodec:
    def test_round_trip_ten_thousand(self):
        rng = np.random.default_rng(0)
        c = PrivateCodec(12345)
        for i in range(10_000):
            f = CanonicalFact(f"e{rng.integers(50)}", int(rng.integers(20)), cell_str(tuple(rng.integers(0, 9, 2))),
                              float(rng.random()))
            assert c.decode(c.encode(f)) == f

    def test_foreign_rejected_ten_thousand(self):
        rng = np.random.default_rng(1)
        for i in range(10_000):
            if i % 100 == 0:
                a, b = distinct_codecs(rng)
            f = CanonicalFact(f"e{i}", i % 16, "3,4", 1.0)
            with pytest.raises(ForeignEncoding):
                b.decode(a.encode(f))

    @given(facts, facts)
    def test_injective(self, f, g):
        c = PrivateCodec(99)
        assert (c.encode(f) == c.encode(g)) == (f == g)

    def test_encoding_is_opaque(self):
        f = CanonicalFact("alice", 3, "east-bank", 1.0)
        pf = PrivateCodec(5).encode(f)
        assert b"alice" not in pf.subject and pf.obj != b"east-bank"

    def test_injection_accepts_nothing(self, ref_vocab):
        rng = np.random.default_rng(2)
        a, b = distinct_codecs(rng)
        terrain = StaticMap(9, 7)
        sa = deposit(new_state("alice", a, ref_vocab, terrain), "goal",
                     [CanonicalFact("L1", ref_vocab.id("place"), "ravine", 1.0)])
        sb = new_state("bob", b, ref_vocab, terrain)
        sb2, n = inject_raw(sb, raw_facts(sa))
        assert n == 0 and sb2 is sb

    def test_own_facts_pass_own_check(self, ref_vocab):
        c = PrivateCodec(7)
        s = deposit(new_state("a", c, ref_vocab, StaticMap(3, 3)), "goal", [CanonicalFact("x", 9, "y", 0.5)])
        assert all(c.accepts(pf) for pf in raw_facts(s))


def conj_oracle(counts, cells):
    """Dirichlet-categorical update with exact fractions."""
    alpha = [Fraction(x) for x in counts]
    total = sum(alpha)
    probs = [alpha[c] / total for c in cells]
    for c in cells:
        alpha[c] += 1
    return [float(x) for x in alpha], probs


class TestBeliefs:
    def at(self, v, ent, c):
        return CanonicalFact(ent, v.id("at"), cell_str(c), 1.0)

    def test_closed_form_example(self, ref_vocab):
        s = new_state("a", PrivateCodec(1), ref_vocab, StaticMap(4, 1))
        s = s.__class__(**{**s.__dict__, "beliefs": {"x": np.ones(4)}})
        s2, err = observe(s, [self.at(ref_vocab, "x", (2, 0))])
        assert s2.beliefs["x"].tolist() == [1, 1, 2, 1]
        assert err.magnitude == pytest.approx(0.75, abs=1e-12)

    def test_matches_conjugate_oracle(self, ref_vocab):
        v = ref_vocab
        for case in range(100):
            rng = np.random.default_rng(case)
            w, h = int(rng.integers(2, 6)), int(rng.integers(1, 5))
            n = w * h
            ents = [f"e{i}" for i in range(int(rng.integers(1, 4)))]
            beliefs = {e: rng.uniform(0.01, 3.0, n) for e in ents}
            s = new_state("a", PrivateCodec(case), v, StaticMap(w, h))
            s = s.__class__(**{**s.__dict__, "beliefs": {k: b.copy() for k, b in beliefs.items()}})
            obs, want_p, want_counts = [], [], {}
            for e in ents:
                cells = sorted({(int(rng.integers(w)), int(rng.integers(h))) for _ in range(int(rng.integers(1, 3)))})
                obs += [self.at(v, e, c) for c in cells]
                counts, probs = conj_oracle(beliefs[e], [y * w + x for x, y in cells])
                want_counts[e] = counts
                want_p += probs
            s2, err = observe(s, obs)
            for e in ents:
                assert np.allclose(s2.beliefs[e], want_counts[e], atol=1e-9, rtol=0)
            assert abs(err.magnitude - (1 - float(sum(want_p) / len(want_p)))) < 1e-9

    def test_repeated_observation_error_strictly_decreases(self, ref_vocab):
        s = new_state("a", PrivateCodec(1), ref_vocab, StaticMap(9, 7))
        errs = []
        for _ in range(51):
            s, err = observe(s, [self.at(ref_vocab, "x", (3, 4))])
            errs.append(err.magnitude)
        errs = errs[1:]  # the first sighting only seeds the belief
        assert all(a > b for a, b in zip(errs, errs[1:]))

    def test_first_sighting_no_error(self, ref_vocab):
        s = new_state("a", PrivateCodec(1), ref_vocab, StaticMap(9, 7))
        _, err = observe(s, [self.at(ref_vocab, "x", (3, 4))])
        assert err.magnitude == 0.0 and err.facts == ()

    def test_counts_stay_positive(self, ref_vocab):
        s = new_state("a", PrivateCodec(1), ref_vocab, StaticMap(3, 3))
        for c in [(0, 0), (1, 1), (2, 2)]:
            s, _ = observe(s, [self.at(ref_vocab, "x", c)])
        assert (s.beliefs["x"] > 0).all() and np.isfinite(s.beliefs["x"].sum())

    def test_mode_match_is_not_a_surprise(self, ref_vocab):
        terrain = StaticMap(10, 1)
        ag = make_agent("a", ref_vocab, 3, terrain)
        counts = np.full(10, 1.0 / 9)
        counts[4] = 9.0  # predictive mass 0.9 on cell 4
        ag = ag.__class__(**{**ag.__dict__, "lower": ag.lower.__class__(**{**ag.lower.__dict__, "beliefs": {"x": counts}})})
        _, perc = perceive(ag, [self.at(ref_vocab, "x", (4, 0))])
        assert perc.errors[0].magnitude == pytest.approx(0.1)
        assert perc.surprises == ()


class TestExpectations:
    def test_motor_match_and_miss(self, ref_vocab):
        v = ref_vocab
        s = expect(new_state("a", PrivateCodec(1), v, StaticMap(9, 7)), "L1", [(2, 3), (3, 3)])
        _, err = check_expectations(s, [CanonicalFact("L1", v.id("at"), "2,3", 1.0),
                                        CanonicalFact("L1", v.id("at"), "3,3", 1.0)])
        assert err.magnitude == pytest.approx(1 - MOTOR_CONFIDENCE) and err.source == "effect"
        s2, err = check_expectations(s, [CanonicalFact("L1", v.id("at"), "1,3", 1.0),
                                         CanonicalFact("L1", v.id("at"), "2,3", 1.0)])
        assert err.magnitude == pytest.approx(MOTOR_CONFIDENCE)
        assert s2.expectations == {}


def maze(seed):
    rng = np.random.default_rng(seed)
    w, h = int(rng.integers(3, 10)), int(rng.integers(3, 10))
    ents = {}
    cells = [(x, y) for y in range(h) for x in range(w)]
    idx = rng.permutation(len(cells))
    start, goal = cells[idx[0]], cells[idx[1]]
    for k in idx[2:]:
        if rng.random() < 0.3:
            ents[f"T{k}"] = Entity(f"T{k}", "tree", (cells[k],))
    ents["me"] = Entity("me", "agent", (start,))
    return GridWorld(w, h, frozenset(), frozenset({goal}), ents, sensing_radius=20), start, goal


class TestUnits:
    def test_empty_blackboard_waits(self, ref_vocab):
        s = new_state("a", PrivateCodec(1), ref_vocab, StaticMap(3, 3))
        assert generate_behavior(s, []) == Wait()

    @pytest.mark.parametrize("seed", range(200))
    def test_navigation_matches_bfs(self, ref_vocab, seed):
        w, start, goal = maze(seed)
        v = ref_vocab
        s = new_state("me", PrivateCodec(1), v, StaticMap.of(w))
        view = sense(w, "me", 20, v)
        g = nx.grid_2d_graph(w.width, w.height)
        g.remove_nodes_from(w.tree_cells())
        try:
            want = nx.shortest_path_length(g, start, goal)
        except nx.NetworkXNoPath:
            want = None
        res = NAVIGATION.run(s, local_world(s, view),
                             [CanonicalFact("me", v.id("at"), cell_str(goal), 1.0)])
        if want is None:
            assert res.stalled
        else:
            assert len(res.plan) == want
            assert res.plan[-1].obj == cell_str(goal)
            assert isinstance(res.action, Move)

    def test_first_move_on_unique_shortest_path(self, ref_vocab):
        v = ref_vocab
        w = build_world({"grid": {"width": 9, "height": 7, "ravine": [], "goal": [[8, 6]]}, "entities": []})
        w = w.with_entity(Entity("me", "agent", ((5, 5),)))
        s = deposit(new_state("me", PrivateCodec(1), v, StaticMap.of(w)), "goal",
                    [CanonicalFact("me", v.id("at"), "5,2", 1.0)])
        assert generate_behavior(s, sense(w, "me", 9, v)) == Move("N")

    def test_manipulation_pushes_when_adjacent(self, reference, ref_vocab):
        v = ref_vocab
        w = build_world({"grid": reference.grid, "entities": list(reference.entities)})
        w = w.with_entity(Entity("me", "agent", ((1, 2),)))
        goal = [CanonicalFact("L1", v.id("at"), c, 1.0) for c in ("3,3", "4,3", "5,3")]
        s = deposit(new_state("me", PrivateCodec(1), v, StaticMap.of(w)), "goal", goal)
        assert generate_behavior(s, sense(w, "me", 3, v)) == Push("L1", "E")

    def test_behavior_is_deterministic(self, reference, ref_vocab):
        v = ref_vocab
        w = build_world({"grid": reference.grid, "entities": list(reference.entities)})
        w = w.with_entity(Entity("me", "agent", ((0, 0),)))
        s = deposit(new_state("me", PrivateCodec(1), v, StaticMap.of(w)), "goal",
                    [CanonicalFact("L1", v.id("place"), "ravine", 1.0)])
        view = sense(w, "me", 3, v)
        outs = {tick(s, view)[1] for _ in range(5)}
        assert len(outs) == 1

    def test_satisfied_goal_item_removed(self, ref_vocab):
        v = ref_vocab
        w = build_world({"grid": {"width": 5, "height": 5, "ravine": [], "goal": [[4, 4]]}, "entities": []})
        w = w.with_entity(Entity("me", "agent", ((1, 1),)))
        s = deposit(new_state("me", PrivateCodec(1), v, StaticMap.of(w)), "goal",
                    [CanonicalFact("me", v.id("at"), "1,1", 1.0)])
        s2, act, _ = tick(s, sense(w, "me", 3, v))
        assert act == Wait() and s2.blackboard == ()

    def test_plan_direct_unsolved_without_taker(self, ref_vocab):
        v = ref_vocab
        s = new_state("me", PrivateCodec(1), v, StaticMap(3, 3))
        plan, solved = plan_direct(s, [], [CanonicalFact("x", v.id("signals"), "y", 1.0)])
        assert plan == frozenset() and not solved


class TestVerticalSpace:
    def test_empty(self):
        assert vertical_space_unit([], ["a", "b"]) == {"a": 0, "b": 0}

    def test_chain(self):
        assert vertical_space_unit([("A", "B"), ("B", "C")]) == {"A": 2, "B": 1, "C": 0}

    def test_cycle(self):
        with pytest.raises(CyclicConstraints):
            vertical_space_unit([("A", "B"), ("B", "A")])

    @given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=20))
    def test_against_topological_oracle(self, edges):
        from graphlib import CycleError, TopologicalSorter

        pairs = [(f"n{a}", f"n{b}") for a, b in edges]
        ts = TopologicalSorter()
        for up, low in pairs:
            ts.add(up, low)  # low must come before up
        try:
            order = list(ts.static_order())
        except CycleError:
            with pytest.raises(CyclicConstraints):
                vertical_space_unit(pairs)
            return
        h = vertical_space_unit(pairs)
        want = {}
        for node in order:
            want[node] = 1 + max((want[low] for up, low in pairs if up == node), default=-1)
        assert h == want
        assert all(h[u] > h[l] for u, l in pairs)
