"""Experiment configuration: loading, schema validation and seed resolution."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from ..errors import ConfigError

SEED_ENV = "MARGIN_ACTIVE_SEED"
DEFAULT_SEED = 20240601
DEFAULT_MC_POINTS = 100_000


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config.schema.json").read_text())


def _path(parts) -> str:
    return "/".join(str(p) for p in parts) or "<root>"


def validate(raw: dict) -> None:
    """Raise ``ConfigError`` naming the offending field path."""
    validator = jsonschema.Draft202012Validator(load_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(raw))
    if err is not None:
        raise ConfigError(err.message, _path(err.absolute_path))
    for key, budgets in (("budgets", raw.get("budgets")),
                         ("lowerbound/budgets", raw.get("lowerbound", {}).get("budgets"))):
        for i in range(1, len(budgets or [])):
            if budgets[i] <= budgets[i - 1]:
                raise ConfigError("budgets must be strictly increasing", f"{key}/{i}")
    ids = [lc.get("id", lc["kind"]) for lc in raw.get("learners", [])]
    for i, name in enumerate(ids):
        if name in ids[:i]:
            raise ConfigError(f"duplicate learner id {name!r}", f"learners/{i}/id")


@dataclass
class ExperimentConfig:
    raw: dict
    seed: int = DEFAULT_SEED
    output: str = "results"
    specs: list[dict] = field(default_factory=list)
    learners: list[dict] = field(default_factory=list)
    budgets: list[int] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    method: str = "auto"
    mc_points: int = DEFAULT_MC_POINTS
    record_timing: bool = False

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None, output: str | None = None,
                  mc_points: int | None = None) -> "ExperimentConfig":
        """Validate ``raw`` and apply overrides (flag, then environment, then file)."""
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object", "<root>")
        validate(raw)
        if seed is None and os.environ.get(SEED_ENV):
            try:
                seed = int(os.environ[SEED_ENV])
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be an integer", "seed") from exc
        if seed is not None and seed < 0:
            raise ConfigError("seed must be nonnegative", "seed")
        ev = raw.get("evaluation", {})
        return cls(
            raw=raw,
            seed=int(seed if seed is not None else raw.get("seed", DEFAULT_SEED)),
            output=output or raw.get("output", "results"),
            specs=list(raw.get("specs", [])),
            learners=list(raw.get("learners", [])),
            budgets=list(raw.get("budgets", [])),
            seeds=list(raw.get("seeds", [0])),
            method=ev.get("method", "auto"),
            mc_points=int(mc_points or ev.get("mc_points", DEFAULT_MC_POINTS)),
            record_timing=bool(raw.get("record_timing", False)),
        )

    def effective(self) -> dict:
        out = dict(self.raw)
        out["seed"] = self.seed
        out.setdefault("evaluation", {})
        out["evaluation"] = dict(out["evaluation"], method=self.method, mc_points=self.mc_points)
        out.pop("output", None)
        return out

    @property
    def hash(self) -> str:
        blob = json.dumps(self.effective(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "<root>") from exc
    return ExperimentConfig.from_dict(raw, **overrides)
