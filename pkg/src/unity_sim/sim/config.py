"""Scenario files: schema, defaults, overrides and resolution."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import jsonschema

from ..chain import ProtocolParams
from .engine import BEHAVIORS, ActorSpec, steady_state_params

SCENARIO_TYPES = ("steady_state", "fairness", "double_spend", "stake_grinding",
                  "collusion", "convergence")

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_hex32 = {"type": "string", "pattern": "^[0-9a-fA-F]{64}$"}

SCHEMA = {
    "type": "object",
    "required": ["type", "actors"],
    "additionalProperties": False,
    "properties": {
        "type": {"enum": list(SCENARIO_TYPES)},
        "description": {"type": "string"},
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "T": _pos, "alpha": _pos, "lam": _pos,
                "unlock_delay": {"type": "integer", "minimum": 0},
                "genesis_d_w": {"type": "number", "minimum": 1},
                "genesis_d_s": _pos,
                "genesis_seed_0": _hex32, "genesis_seed_1": _hex32,
                "max_future_drift": _nonneg,
                "pow_hash": {"enum": ["sha256", "oracle"]},
            },
        },
        "actors": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "hash_rate": _nonneg,
                    "stake": _nonneg,
                    "behavior": {"enum": list(BEHAVIORS)},
                },
            },
        },
        "duration_days": _pos,
        "duration_blocks": {"type": "integer", "minimum": 1},
        "trials": {"type": "integer", "minimum": 1},
        "rng_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "k": _nonneg, "l": _nonneg,
        "horizon": {"type": "integer", "minimum": 1},
        "leak_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "x": {"type": "integer", "minimum": 0},
        "p": {"type": "number", "minimum": 0, "maximum": 1},
        "method": {"enum": ["bernoulli", "race"]},
        "bins": {"type": "integer", "minimum": 1},
        "bin_width": _pos,
        "burn_in": {"type": "integer", "minimum": 0},
        "analytic_difficulty": {"type": "boolean"},
        "validate_every": {"type": "integer", "minimum": 0},
        "stall_timeout": _pos,
    },
}

# numeric fields a sweep may vary, and where they live
SWEEP_AXES = {
    "k": "k", "l": "l", "horizon": "horizon", "trials": "trials",
    "leak_fraction": "leak_fraction", "x": "x", "p": "p",
    "duration_days": "duration_days", "duration_blocks": "duration_blocks",
    "rng_seed": "rng_seed", "burn_in": "burn_in",
    "T": "params.T", "alpha": "params.alpha", "unlock_delay": "params.unlock_delay",
    "genesis_d_w": "params.genesis_d_w", "genesis_d_s": "params.genesis_d_s",
    "max_future_drift": "params.max_future_drift",
}


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    type: str
    params: ProtocolParams
    actors: list
    duration_days: float | None = None
    duration_blocks: int | None = None
    trials: int = 1
    rng_seed: int = 0
    k: float = 1.0
    l: float = 1.0
    horizon: int = 2000
    leak_fraction: float = 0.0
    x: int | None = None
    p: float | None = None
    method: str = "bernoulli"
    bins: int = 100
    bin_width: float = 1.0
    burn_in: int = 0
    analytic_difficulty: bool = False
    validate_every: int = 100
    stall_timeout: float = 86400.0
    description: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def until(self) -> float | None:
        return self.duration_days * 86400.0 if self.duration_days else None

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "raw"}
        d["params"] = self.params.to_dict()
        d["actors"] = [asdict(a) for a in self.actors]
        return d


def load_scenario_text(text: str, source: str = "<scenario>") -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    validate_scenario(data, source, text)
    return data


def validate_scenario(data: dict, source: str = "<scenario>", text: str | None = None) -> None:
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        line = _line_of(text, exc.absolute_path) if text else None
        where = f"{source}:{line}" if line else source
        raise ScenarioError(f"{where}: at {path}: {exc.message}") from None


def _line_of(text: str, path) -> int | None:
    """Best-effort line number of the last string key in ``path``."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    needle = json.dumps(keys[-1]) + ":"
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line.replace('" :', '":'):
            return i
    return None


def parse_override(item: str):
    if "=" not in item:
        raise ScenarioError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.strip(), parsed


def apply_overrides(data: dict, overrides) -> dict:
    """Return a copy of ``data`` with dotted ``key=value`` overrides applied."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        key = SWEEP_AXES.get(key, key) if "." not in key else key
        target = data
        parts = key.split(".")
        for p in parts[:-1]:
            target = target.setdefault(p, {})
            if not isinstance(target, dict):
                raise ScenarioError(f"override {key!r} does not address an object")
        target[parts[-1]] = value
    return data


def _genesis_seed(rng_seed: int, i: int) -> str:
    return hashlib.sha256(f"genesis seed {i} for run {rng_seed}".encode()).hexdigest()


def resolve(data: dict, source: str = "<scenario>") -> ScenarioConfig:
    """Validate ``data`` and fill in every default.

    Missing genesis difficulties become the steady-state values H*T and V*T;
    missing genesis seeds are derived from rng_seed so that runs with
    different seeds see different stake lotteries.
    """
    validate_scenario(data, source)
    actors = [ActorSpec(**a) for a in data["actors"]]
    if len({a.id for a in actors}) != len(actors):
        raise ScenarioError(f"{source}: duplicate actor ids")
    rng_seed = int(data.get("rng_seed", 0))
    pdata = dict(data.get("params", {}))
    pdata.setdefault("pow_hash", "oracle")
    for i in (0, 1):
        pdata.setdefault(f"genesis_seed_{i}", _genesis_seed(rng_seed, i))
    steady_w = "genesis_d_w" not in pdata
    steady_s = "genesis_d_s" not in pdata
    try:
        params = ProtocolParams.from_dict(pdata)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{source}: params: {exc}") from None
    steady = steady_state_params(params, actors)
    params = replace(params,
                     genesis_d_w=steady.genesis_d_w if steady_w else params.genesis_d_w,
                     genesis_d_s=steady.genesis_d_s if steady_s else params.genesis_d_s)
    fields = {k: v for k, v in data.items() if k not in ("params", "actors")}
    cfg = ScenarioConfig(params=params, actors=actors, raw=data, **fields)
    if cfg.type in ("steady_state", "fairness") and not (cfg.duration_days or cfg.duration_blocks):
        raise ScenarioError(f"{source}: {cfg.type} needs duration_days or duration_blocks")
    if cfg.type in ("collusion", "convergence") and not (cfg.duration_days or cfg.duration_blocks):
        raise ScenarioError(f"{source}: {cfg.type} needs duration_days or duration_blocks")
    if cfg.type == "fairness" and len(actors) < 2:
        raise ScenarioError(f"{source}: fairness needs at least two actors")
    return cfg


def load_scenario(path, overrides=()) -> ScenarioConfig:
    with open(path) as fh:
        text = fh.read()
    data = load_scenario_text(text, str(path))
    if overrides:
        data = apply_overrides(data, overrides)
    return resolve(data, str(path))
