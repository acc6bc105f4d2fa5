"""Scenario loading, episode orchestration, traces, sweeps and the exhaustive oracle."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .agent import Agent, act, focus_on, make_agent, perceive, trigger_fact
from .concepts import (
    CanonicalFact, ConceptError, Explanation, Vocabulary, make_vocabulary, render,
)
from .dialog import OutOfRange, Phase, begin, evaluate_and_refine, ingest, new_dialog, transmit
from .lower import PrivateCodec, StaticMap, inject_raw, raw_facts
from .params import ConfigError, Params, with_env
from .upper import (
    CONCEPT_THRESHOLD, AbstractModel, Idea, PerspectiveModel, build_explanation, candidate_pool, concretize,
    divergence, peer_perspective, score_key, self_perspective,
)
from .world import (
    Entity, GridWorld, action_record, build_world, chebyshev, sense, step, task_success,
)

log = logging.getLogger(__name__)

ORACLE_MAX_CLAUSES = 4
ORACLE_MAX_CONCEPTS = 8


class SpaceTooLarge(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


# config -----------------------------------------------------------------------------
@dataclass(frozen=True)
class Flags:
    dialog: bool = True
    ablate_raw_copy: bool = False
    pre_dialog_observation: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    grid: dict
    entities: tuple[dict, ...]
    agents: tuple[dict, ...]
    vocabulary: dict
    tom_priors: dict = field(default_factory=dict)
    referent_overrides: dict = field(default_factory=dict)
    params: Params = Params()
    flags: Flags = Flags()

    def to_dict(self) -> dict:
        return {
            "name": self.name, "grid": self.grid, "entities": list(self.entities), "agents": list(self.agents),
            "vocabulary": self.vocabulary, "tom_priors": self.tom_priors,
            "referent_overrides": self.referent_overrides, "params": self.params.to_dict(),
            "flags": {"dialog": self.flags.dialog, "ablate_raw_copy": self.flags.ablate_raw_copy,
                      "pre_dialog_observation": self.flags.pre_dialog_observation},
        }

    def build_vocabulary(self, agent_id: str | None = None) -> Vocabulary:
        v = self.vocabulary
        voc = make_vocabulary([tuple(c) for c in v["concepts"]], v.get("decompositions", {}), v.get("referents", {}))
        if agent_id is not None and self.referent_overrides.get(agent_id):
            voc = voc.with_referents(self.referent_overrides[agent_id])
        return voc


def _jsonable(x):
    return json.loads(json.dumps(x))


def render_config(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2)


def config_hash(cfg: ScenarioConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def parse_config(text: str | Mapping) -> ScenarioConfig:
    """Parse and validate a scenario; every problem found is reported in one ConfigError."""
    if isinstance(text, str):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError({"json": str(exc)}) from None
    else:
        d = _jsonable(dict(text))
    errs: dict[str, str] = {}
    for key in ("name", "grid", "entities", "agents", "vocabulary"):
        if key not in d:
            errs[key] = "missing"
    if errs:
        raise ConfigError(errs)
    try:
        params = Params.from_dict(d.get("params", {}))
    except ConfigError as exc:
        errs.update(exc.errors)
        params = Params()
    except TypeError as exc:
        errs["params"] = str(exc)
        params = Params()
    fl = d.get("flags", {})
    unknown = set(fl) - {"dialog", "ablate_raw_copy", "pre_dialog_observation"}
    for k in sorted(unknown):
        errs[f"flags.{k}"] = "unknown flag"
    flags = Flags(**{k: bool(v) for k, v in fl.items() if k not in unknown})
    cfg = ScenarioConfig(
        d["name"], d["grid"], tuple(d["entities"]), tuple(d["agents"]), d["vocabulary"],
        d.get("tom_priors", {}), d.get("referent_overrides", {}), params, flags,
    )
    errs.update(_validate(cfg))
    if errs:
        raise ConfigError(errs)
    return cfg


def _validate(cfg: ScenarioConfig) -> dict[str, str]:
    errs: dict[str, str] = {}
    g = cfg.grid
    try:
        w, h = int(g["width"]), int(g["height"])
    except (KeyError, TypeError, ValueError):
        return {"grid": "width and height are required integers"}

    def check_cells(path, cells):
        for c in cells:
            if len(c) != 2 or not (0 <= c[0] < w and 0 <= c[1] < h):
                errs[path] = f"cell {c} out of bounds for {w}x{h}"
                return

    check_cells("grid.ravine", g.get("ravine", []))
    check_cells("grid.goal", g.get("goal", []))
    if not g.get("goal"):
        errs["grid.goal"] = "at least one goal cell is required"
    for name, cells in g.get("regions", {}).items():
        check_cells(f"grid.regions.{name}", cells)
    for i, e in enumerate(cfg.entities):
        check_cells(f"entities[{i}].cells", e.get("cells", []))
    try:
        vocab = cfg.build_vocabulary()
    except (ConceptError, KeyError, ValueError, TypeError) as exc:
        errs["vocabulary"] = str(exc)
        vocab = None
    ids, seeds = set(), {}
    for i, a in enumerate(cfg.agents):
        aid = a.get("id")
        if not aid or aid in ids:
            errs[f"agents[{i}].id"] = "missing or duplicate agent id"
        ids.add(aid)
        if "codec_seed" not in a:
            errs[f"agents[{i}].codec_seed"] = "missing"
        elif a["codec_seed"] in seeds:
            errs[f"agents[{i}].codec_seed"] = f"same as agent {seeds[a['codec_seed']]!r}; codec seeds must differ"
        else:
            seeds[a["codec_seed"]] = aid
        st = a.get("start")
        if isinstance(st, list):
            check_cells(f"agents[{i}].start", [st])
        elif isinstance(st, dict):
            if st.get("near") not in {x.get("id") for x in cfg.agents}:
                errs[f"agents[{i}].start.near"] = "must name another agent"
            check_cells(f"agents[{i}].start.box", st.get("box", []))
        else:
            errs[f"agents[{i}].start"] = "expected [x, y] or {near, radius, box}"
        if vocab is not None:
            for name in a.get("known") or []:
                if name not in vocab._by_name:
                    errs[f"agents[{i}].known"] = f"unknown concept {name!r}"
            for j, f in enumerate(a.get("goals", [])):
                if len(f) not in (3, 4) or f[1] not in vocab._by_name:
                    errs[f"agents[{i}].goals[{j}]"] = f"bad fact {f!r}"
    if vocab is not None:
        for sender, peers in cfg.tom_priors.items():
            for peer, pri in peers.items():
                for name, p in pri.items():
                    if name not in vocab._by_name:
                        errs[f"tom_priors.{sender}.{peer}"] = f"unknown concept {name!r}"
                    elif not 0 <= p <= 1:
                        errs[f"tom_priors.{sender}.{peer}"] = f"probability {p} outside [0, 1]"
        for aid, ov in cfg.referent_overrides.items():
            try:
                vocab.with_referents(ov)
            except ConceptError as exc:
                errs[f"referent_overrides.{aid}"] = str(exc)
    senders = [a for a in cfg.agents if a.get("role") == "sender"]
    if len(senders) > 1:
        errs["agents"] = "at most one sender"
    return errs


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load a scenario file, or a bundled scenario by bare name (e.g. ``reference``)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and len(p.parts) == 1:
        res = resources.files("sharedint") / "scenarios" / f"{p.name}.json"
        if not res.is_file():
            raise ConfigError({"scenario": f"no such scenario {str(path)!r}"})
        return parse_config(res.read_text())
    try:
        return parse_config(p.read_text())
    except OSError as exc:
        raise ConfigError({"scenario": str(exc)}) from None


def with_overrides(cfg: ScenarioConfig, *, params: Mapping | None = None, env: Mapping[str, str] | None = None,
                   **flags) -> ScenarioConfig:
    p = cfg.params
    if params:
        p = Params.from_dict({**p.to_dict(), **params})
    if env is not None:
        p = with_env(p, env)
    fl = replace(cfg.flags, **{k: v for k, v in flags.items() if v is not None})
    return replace(cfg, params=p, flags=fl)


# seeding ----------------------------------------------------------------------------
def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` under the episode seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),)))


def codec_seeds(cfg: ScenarioConfig, seed: int) -> dict[str, int]:
    """Per-agent codec seeds mixed with the episode seed; codec ids are kept pairwise distinct."""
    out: dict[str, int] = {}
    used: set[int] = set()
    for a in cfg.agents:
        rng = substream(seed, f"codec:{a['id']}")
        base = int(a["codec_seed"])
        while True:
            s = (base ^ int(rng.integers(0, 2**63))) & ((1 << 64) - 1)
            cid = PrivateCodec(s).codec_id
            if cid not in used:
                break
        used.add(cid)
        out[a["id"]] = s
    return out


def place_agents(cfg: ScenarioConfig, seed: int, world: GridWorld) -> GridWorld:
    fixed = {a["id"]: tuple(a["start"]) for a in cfg.agents if isinstance(a["start"], list)}
    for aid, c in fixed.items():
        world = world.with_entity(Entity(aid, "agent", (c,)))
    for a in cfg.agents:
        st = a["start"]
        if isinstance(st, list):
            continue
        anchor = world.entities[st["near"]].cell
        (x0, y0), (x1, y1) = st.get("box", [[0, 0], [world.width - 1, world.height - 1]])
        occupied = {c for e in world.entities.values() for c in e.cells}
        cands = [
            (x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1)
            if (x, y) not in occupied and (x, y) not in world.ravine and chebyshev((x, y), anchor) <= st["radius"]
        ]
        if not cands:
            raise ConfigError({f"agents.{a['id']}.start": "no free start cell"})
        c = cands[int(substream(seed, f"start:{a['id']}").integers(len(cands)))]
        world = world.with_entity(Entity(a["id"], "agent", (c,)))
    return world


# trace ------------------------------------------------------------------------------
class Trace:
    def __init__(self, cfg: ScenarioConfig, seed: int, verbosity: int = 1, steps: int | None = None):
        self.header = {"type": "header", "config_hash": config_hash(cfg), "seed": int(seed), "version": __version__,
                       "steps": steps, "verbosity": verbosity, "config": cfg.to_dict()}
        self.records: list[dict] = []
        self.footer: dict | None = None
        self.verbosity = verbosity
        self._seq = 0
        self._last = (-1, -1)

    def add(self, step_no: int, rec: Mapping, level: int = 1) -> None:
        if level > self.verbosity:
            return
        key = (int(step_no), self._seq)
        if key <= self._last:
            raise InvariantViolation(f"trace record {key} out of order after {self._last}")
        self._last = key
        self.records.append({"type": "record", "step": key[0], "seq": key[1], **_jsonable(dict(rec))})
        self._seq += 1

    def close(self, outcome: str, metrics: Mapping) -> None:
        self.footer = {"type": "footer", "outcome": outcome, "metrics": _jsonable(dict(metrics))}

    def lines(self) -> list[str]:
        rows = [self.header, *self.records] + ([self.footer] if self.footer else [])
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in rows]

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.text())


def read_trace(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# episode ----------------------------------------------------------------------------
@dataclass(frozen=True)
class EpisodeResult:
    outcome: str
    metrics: dict
    trace: Trace

    @property
    def trace_hash(self) -> str:
        return self.trace.digest()


def _facts(vocab: Vocabulary, rows: Iterable[Sequence]) -> list[CanonicalFact]:
    return [CanonicalFact(r[0], vocab.id(r[1]), r[2], float(r[3]) if len(r) > 3 else 1.0) for r in rows]


def build_agents(cfg: ScenarioConfig, seed: int, world: GridWorld) -> dict[str, Agent]:
    seeds = codec_seeds(cfg, seed)
    terrain = StaticMap.of(world)
    agents = {}
    for a in cfg.agents:
        vocab = cfg.build_vocabulary(a["id"])
        known = None if a.get("known") is None else [vocab.id(n) for n in a["known"]]
        priors = {peer: {vocab.id(n): float(p) for n, p in pr.items()}
                  for peer, pr in cfg.tom_priors.get(a["id"], {}).items()}
        agents[a["id"]] = make_agent(
            a["id"], vocab, seeds[a["id"]], terrain, known=known, goals=_facts(vocab, a.get("goals", [])),
            priors=priors, params=cfg.params,
        )
    return agents


def initial_world(cfg: ScenarioConfig, seed: int) -> GridWorld:
    spec = {"grid": cfg.grid, "entities": list(cfg.entities), "sensing_radius": cfg.params.sensing_radius}
    return place_agents(cfg, seed, build_world(spec))


def run_episode(cfg: ScenarioConfig, seed: int, *, steps: int | None = None, verbosity: int = 1) -> EpisodeResult:
    """Simulate one episode; the same (config, seed) always yields the same trace."""
    world = initial_world(cfg, seed)
    agents = build_agents(cfg, seed, world)
    order = sorted(agents)
    trace = Trace(cfg, seed, verbosity, steps)
    budget = cfg.params.step_budget if steps is None else steps
    sender_id = next((a["id"] for a in cfg.agents if a.get("role") == "sender"), None)
    receiver_id = next((x for x in order if x != sender_id), None) if sender_id else None
    dialog = new_dialog(sender_id, receiver_id, cfg.params.failure_budget) if sender_id and receiver_id else None
    m = {"success": False, "steps_used": 0, "dialog_rounds": 0, "explanation_lengths": [],
         "final_divergence": None, "surprise_count": 0, "raw_accepted": 0, "raw_offered": 0}
    trace.add(0, {"event": "start", "positions": {a: list(world.entities[a].cell) for a in order},
                  "backend": _backend()})
    inbox: dict[str, list[tuple[str, bytes]]] = {a: [] for a in order}
    injected = False
    for t in range(budget):
        views = {a: sense(world, a, cfg.params.sensing_radius, agents[a].vocab) for a in order}
        # perception and mime reception
        for a in order:
            agents[a], perc = perceive(agents[a], views[a])
            for err in perc.surprises:
                m["surprise_count"] += 1
                trace.add(t, {"event": "surprise", "agent": a, "source": err.source,
                              "magnitude": round(err.magnitude, 12)})
            for sender, payload in inbox[a]:
                agents[a], rec = ingest(agents[a], payload, sender)
                trace.add(t, {**rec, "agent": a, "round": dialog.round if dialog else 0})
            inbox[a] = []
            if a == sender_id and perc.surprises and not injected and receiver_id:
                trig = _relevant_trigger(agents[a], perc.surprises)
                if trig is not None and cfg.flags.ablate_raw_copy:
                    injected = True
                    offered = raw_facts(agents[a].lower)
                    agents[receiver_id], ok = _inject(agents[receiver_id], offered)
                    m["raw_offered"] += len(offered)
                    m["raw_accepted"] += ok
                    trace.add(t, {"event": "raw_copy", "from": a, "to": receiver_id, "offered": len(offered),
                                  "accepted": ok})
                if trig is not None and cfg.flags.dialog and dialog.phase is Phase.IDLE:
                    agents[a], idea = focus_on(agents[a], trig)
                    searched: list = []
                    try:
                        dialog, e = begin(agents[a], dialog, idea, searched)
                        _search_records(trace, t, dialog.round, searched, agents[a].vocab)
                        trace.add(t, {"event": "explain", "round": dialog.round, "idea": len(idea.facts),
                                      "explanation": render(e, agents[a].vocab)})
                    except ValueError as exc:
                        trace.add(t, {"event": "explain_failed", "round": dialog.round, "error": str(exc)})
        if cfg.flags.pre_dialog_observation and dialog is not None and dialog.phase is Phase.IDLE and receiver_id:
            trace.add(t, {"event": "pre_dialog_watch", "agent": receiver_id,
                          "sees_sender": sender_id in {f.subject for f in views[receiver_id]}}, level=2)
        if dialog is not None and dialog.phase is Phase.OBSERVING:
            searched = []
            agents[sender_id], dialog, rec = evaluate_and_refine(agents[sender_id], dialog, world,
                                                                 search_log=searched)
            if rec is not None:
                trace.add(t, rec)
                if rec["event"] == "refine":
                    _search_records(trace, t, dialog.round, searched, agents[sender_id].vocab)
                    trace.add(t, {"event": "explain", "round": dialog.round,
                                  "explanation": render(dialog.last_explanation, agents[sender_id].vocab)})
        # actions
        actions = {}
        for a in order:
            if dialog is not None and a == sender_id and dialog.phase is Phase.EXPLAINING:
                try:
                    mime, dialog, rec = transmit(agents[a], world, dialog)
                    actions[a] = mime
                    m["explanation_lengths"].append(rec["clauses"])
                    trace.add(t, {**rec, "agent": a})
                    continue
                except OutOfRange as exc:
                    trace.add(t, {"event": "out_of_range", "round": dialog.round, "error": str(exc)})
            agents[a], actions[a], evs = act(agents[a], views[a])
            for ev in evs:
                trace.add(t, {**ev, "agent": a}, level=2)
        trace.add(t, {"event": "actions", "actions": {a: action_record(actions[a]) for a in order}})
        world, events = step(world, actions)
        for ev in events:
            if ev.kind == "mime":
                inbox[ev.agent].append((ev.data["sender"], bytes.fromhex(ev.data["bytes"])))
            if ev.kind != "mime_sent":
                trace.add(t, ev.record())
        m["steps_used"] = t + 1
        if task_success(world):
            m["success"] = True
            break
    if dialog is not None:
        m["dialog_rounds"] = dialog.round
        if dialog.last_explanation is not None and receiver_id:
            rcv = agents[receiver_id]
            got = concretize(dialog.last_explanation, rcv.self_view, rcv.vocab, cfg.params.concept_threshold)
            m["final_divergence"] = round(divergence(got, dialog.idea.facts, len(dialog.last_explanation),
                                                     cfg.params.lam), 12)
        m["dialog_phase"] = dialog.phase.value
    outcome = "success" if m["success"] else "failure"
    trace.add(m["steps_used"], {"event": "end", "outcome": outcome,
                                "positions": {a: list(world.entities[a].cell) for a in order}})
    trace.close(outcome, m)
    return EpisodeResult(outcome, m, trace)


def _search_records(trace: Trace, t: int, rnd: int, searched: list, vocab: Vocabulary) -> None:
    for rank, (cand, score) in enumerate(searched):
        trace.add(t, {"event": "search", "round": rnd, "rank": rank, "candidate": render(cand, vocab),
                      "score": round(score, 12)}, level=2)


def _inject(receiver: Agent, offered) -> tuple[Agent, int]:
    lower, ok = inject_raw(receiver.lower, offered)
    return replace(receiver, lower=lower), ok


def _relevant_trigger(agent: Agent, surprises) -> CanonicalFact | None:
    for err in surprises:
        trig = trigger_fact(agent, err)
        if trig is not None:
            return trig
    return None


def _backend() -> str:
    from ._kernels import backend
    return backend()


# sweeps -----------------------------------------------------------------------------
METRIC_COLUMNS = ("seed", "success", "steps_used", "dialog_rounds", "explanation_lengths", "final_divergence",
                  "surprise_count", "raw_accepted")


def _sweep_one(args) -> tuple[int, dict, str]:
    cfg_dict, seed = args
    res = run_episode(parse_config(cfg_dict), seed)
    return seed, res.metrics, res.trace_hash


def parse_seeds(spec: str) -> list[int]:
    """``a..b`` (inclusive), ``a,b,c`` or a single integer."""
    spec = spec.strip()
    try:
        if ".." in spec:
            a, b = spec.split("..", 1)
            seeds = list(range(int(a), int(b) + 1))
        else:
            seeds = [int(s) for s in spec.split(",") if s.strip()]
    except ValueError:
        raise ConfigError({"seeds": f"cannot parse {spec!r}"}) from None
    if not seeds:
        raise ConfigError({"seeds": "need at least one seed"})
    return seeds


def run_sweep(cfg: ScenarioConfig, seeds: Sequence[int], workers: int = 1) -> list[dict]:
    """One metrics row per seed (in seed order) followed by an aggregate row."""
    if not seeds:
        raise ConfigError({"seeds": "need at least one seed"})
    jobs = [(cfg.to_dict(), int(s)) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows = []
    for seed, met, digest in sorted(results, key=lambda r: seeds.index(r[0])):
        rows.append({**{k: met.get(k) for k in METRIC_COLUMNS if k != "seed"}, "seed": seed, "trace_hash": digest})
    n = len(rows)
    agg = {
        "seed": "all",
        "success": sum(bool(r["success"]) for r in rows) / n,
        "steps_used": float(np.mean([r["steps_used"] for r in rows])),
        "dialog_rounds": float(np.mean([r["dialog_rounds"] for r in rows])),
        "explanation_lengths": float(np.mean([x for r in rows for x in r["explanation_lengths"]] or [0])),
        "final_divergence": _mean_or_none([r["final_divergence"] for r in rows]),
        "surprise_count": float(np.mean([r["surprise_count"] for r in rows])),
        "raw_accepted": sum(r["raw_accepted"] for r in rows),
        "trace_hash": "",
    }
    return rows + [agg]


def _mean_or_none(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def sweep_csv(rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=[*METRIC_COLUMNS, "trace_hash"], lineterminator="\n")
    wr.writeheader()
    for r in rows:
        r = dict(r)
        if isinstance(r.get("explanation_lengths"), list):
            r["explanation_lengths"] = ";".join(map(str, r["explanation_lengths"]))
        wr.writerow(r)
    return buf.getvalue()


# oracle -----------------------------------------------------------------------------
def oracle_argmin(a: AbstractModel, idea: Idea, p: PerspectiveModel, v: Vocabulary, *, lam: float = 0.1,
                  max_clauses: int = ORACLE_MAX_CLAUSES, threshold: float = CONCEPT_THRESHOLD
                  ) -> tuple[Explanation, float]:
    """Exhaustive minimum over every admissible clause set, with the search's tie-break."""
    if max_clauses > ORACLE_MAX_CLAUSES:
        raise SpaceTooLarge(f"oracle limited to {ORACLE_MAX_CLAUSES} clauses, got {max_clauses}")
    pool = candidate_pool(a, idea, v, p, threshold)
    used = {c for cl in pool for c in cl.concepts()}
    if len(used) > ORACLE_MAX_CONCEPTS:
        raise SpaceTooLarge(f"{len(used)} concepts in play, oracle limit is {ORACLE_MAX_CONCEPTS}")
    if not pool:
        from .upper import NoCandidates
        raise NoCandidates("no vocabulary clause expresses any fact of the idea")
    best = None
    for k in range(1, max_clauses + 1):
        for combo in itertools.combinations(pool, k):
            e = build_explanation(combo, idea, p, v, threshold)
            key = score_key(e, idea, p, v, lam, threshold)
            if best is None or key < best[0]:
                best = (key, e)
    return best[1], best[0][0]


def load_idea(cfg: ScenarioConfig, spec: Mapping) -> tuple[Idea, PerspectiveModel, Vocabulary, int]:
    """Idea file: ``{"facts": [[s, pred, o, conf?]...], "agent": id?, "perspective": {...}?, "max_clauses": n?}``."""
    agent = spec.get("agent")
    v = cfg.build_vocabulary(agent)
    try:
        idea = Idea(frozenset(_facts(v, spec["facts"])))
    except (KeyError, ConceptError, ValueError) as exc:
        raise ConfigError({"idea.facts": str(exc)}) from None
    pspec = spec.get("perspective")
    if pspec is None:
        p = self_perspective(v)
    else:
        p = peer_perspective(pspec.get("peer", "peer"), {v.id(n): float(x) for n, x in pspec.get("known", {}).items()},
                             float(pspec.get("default", 1.0)))
    return idea, p, v, int(spec.get("max_clauses", ORACLE_MAX_CLAUSES))


def replay(path: str | Path) -> tuple[bool, str, str]:
    """Re-run the episode recorded in a trace; returns (identical, recorded hash, replayed hash)."""
    rows = read_trace(path)
    if not rows or rows[0].get("type") != "header":
        raise ConfigError({"trace": "missing header"})
    head = rows[0]
    cfg = parse_config(head["config"])
    if config_hash(cfg) != head["config_hash"]:
        raise ConfigError({"trace": "config hash does not match the embedded config"})
    recorded = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    res = run_episode(cfg, head["seed"], steps=head.get("steps"), verbosity=head.get("verbosity", 1))
    return res.trace_hash == recorded, recorded, res.trace_hash
