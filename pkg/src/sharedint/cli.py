"""Command line entry point: ``sharedint run|sweep|oracle|replay``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .concepts import ConceptError, render
from .harness import (
    InvariantViolation, SpaceTooLarge, load_idea, load_scenario, oracle_argmin, parse_seeds, replay, run_episode,
    run_sweep, sweep_csv, with_overrides,
)
from .params import ConfigError
from .upper import new_abstract_model

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3


def _scenario(args):
    return with_overrides(
        load_scenario(args.scenario), env=os.environ,
        dialog=False if getattr(args, "no_dialog", False) else None,
        ablate_raw_copy=True if getattr(args, "ablate_raw_copy", False) else None,
    )


def cmd_run(args) -> int:
    cfg = _scenario(args)
    res = run_episode(cfg, args.seed, steps=args.steps, verbosity=max(1, args.verbose))
    if args.trace:
        res.trace.write(args.trace)
    print(json.dumps({"outcome": res.outcome, "trace_hash": res.trace_hash, **res.metrics}, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _scenario(args)
    rows = run_sweep(cfg, parse_seeds(args.seeds), workers=args.workers)
    text = sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    agg = rows[-1]
    print(f"seeds={len(rows) - 1} success_rate={agg['success']:.3f} mean_steps={agg['steps_used']:.2f}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = load_scenario(args.scenario)
    cfg = with_overrides(cfg, env=os.environ)
    try:
        spec = json.loads(Path(args.idea).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError({"idea": str(exc)}) from None
    idea, p, v, max_clauses = load_idea(cfg, spec)
    try:
        e, score = oracle_argmin(new_abstract_model(v), idea, p, v, lam=cfg.params.lam, max_clauses=max_clauses,
                                 threshold=cfg.params.concept_threshold)
    except SpaceTooLarge as exc:
        print(f"space too large: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"explanation": render(e, v), "score": score}))
    return EXIT_OK


def cmd_replay(args) -> int:
    same, recorded, got = replay(args.trace)
    print(json.dumps({"identical": same, "recorded": recorded, "replayed": got}))
    return EXIT_OK if same else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sharedint", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one episode")
    r.add_argument("--scenario", required=True, help="scenario file or bundled name (reference, wrong_log)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--steps", type=int, default=None, help="override the step budget")
    r.add_argument("--no-dialog", action="store_true")
    r.add_argument("--ablate-raw-copy", action="store_true")
    r.add_argument("--trace", help="write the JSON-lines trace here")
    r.add_argument("-v", "--verbose", action="count", default=0)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run many seeds and write a CSV table")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seeds", required=True, help="a..b inclusive, or a comma list")
    s.add_argument("--out", help="CSV output path")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--no-dialog", action="store_true")
    s.add_argument("--ablate-raw-copy", action="store_true")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle", help="exhaustive explanation argmin for a small idea")
    o.add_argument("--scenario", required=True)
    o.add_argument("--idea", required=True, help="JSON idea file")
    o.set_defaults(func=cmd_oracle)

    p = sub.add_parser("replay", help="re-run a trace and compare hashes")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", 0) >= 2 else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        for field, msg in sorted(exc.errors.items()):
            print(f"config error: {field}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConceptError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
