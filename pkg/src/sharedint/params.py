"""Numeric parameters and their documented ranges.

Every field can be overridden from the environment as ``SHAREDINT_<NAME>``,
e.g. ``SHAREDINT_BEAM_WIDTH=64``.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping

ENV_PREFIX = "SHAREDINT_"


class ConfigError(ValueError):
    """Invalid scenario or parameter; ``errors`` maps field paths to messages."""

    def __init__(self, errors: Mapping[str, str] | str):
        if isinstance(errors, str):
            errors = {"config": errors}
        self.errors = dict(errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in sorted(self.errors.items())))


# name: (lower, upper), inclusive
RANGES: dict[str, tuple[float, float]] = {
    "lam": (0.0, 10.0),
    "beam_width": (1, 4096),
    "max_clauses": (1, 16),
    "surprise_threshold": (0.0, 1.0),
    "sensing_radius": (1, 64),
    "failure_window": (1, 1000),
    "failure_budget": (0, 64),
    "idea_cap": (1, 64),
    "step_budget": (1, 100000),
    "concept_threshold": (0.0, 1.0),
    "refine_factor": (0.0, 0.999),
    "prior_count": (1e-9, 1e6),
}


@dataclass(frozen=True)
class Params:
    lam: float = 0.1
    beam_width: int = 32
    max_clauses: int = 6
    surprise_threshold: float = 0.5
    sensing_radius: int = 3
    failure_window: int = 10
    failure_budget: int = 4
    idea_cap: int = 8
    step_budget: int = 60
    concept_threshold: float = 0.5
    refine_factor: float = 0.25
    prior_count: float = 0.01

    def validate(self) -> "Params":
        errs = {}
        for f in fields(self):
            val = getattr(self, f.name)
            lo, hi = RANGES[f.name]
            if f.type in ("int", int) and (isinstance(val, bool) or not isinstance(val, int)):
                errs[f"params.{f.name}"] = f"expected an integer, got {val!r}"
            elif not isinstance(val, (int, float)) or isinstance(val, bool):
                errs[f"params.{f.name}"] = f"expected a number, got {val!r}"
            elif not lo <= val <= hi:
                errs[f"params.{f.name}"] = f"{val} outside [{lo}, {hi}]"
        if errs:
            raise ConfigError(errs)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Params":
        names = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(names))
        if unknown:
            raise ConfigError({f"params.{k}": "unknown parameter" for k in unknown})
        return cls(**dict(d)).validate()


def _coerce(f, raw: str):
    if f.type in ("int", int):
        return int(raw)
    return float(raw)


def with_env(p: Params, env: Mapping[str, str] | None = None) -> Params:
    """Apply ``SHAREDINT_<NAME>`` overrides on top of ``p``."""
    env = os.environ if env is None else env
    changes = {}
    errs = {}
    for f in fields(p):
        raw = env.get(ENV_PREFIX + f.name.upper())
        if raw is None or raw == "":
            continue
        try:
            changes[f.name] = _coerce(f, raw)
        except ValueError:
            errs[ENV_PREFIX + f.name.upper()] = f"cannot parse {raw!r}"
    if errs:
        raise ConfigError(errs)
    return replace(p, **changes).validate()
