"""Strict JSON configuration loading.

One document carries four optional sections (scenario, ttc, planner,
training) whose field names match the dataclass definitions verbatim.
Unknown keys anywhere are an error: a typo'd field fails fast instead of
silently running with a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_type_hints

from .pipeline import SweepSpec, TrainConfig
from .planner import PlannerConfig
from .safety import TtcParams
from .world import ManeuverProfile, ScenarioConfig


class ConfigError(ValueError):
    pass


_NESTED = {ScenarioConfig: {"hdv_maneuver": ManeuverProfile}}
_TUPLE_FIELDS = {
    TrainConfig: ("hidden",),
    SweepSpec: ("speeds", "ns", "hs"),
}
# "lambda" is the natural name for the static-obstacle weight but is a Python
# keyword, so the dataclass field is "lam"; accept both spellings in JSON
_KEY_ALIASES = {TtcParams: {"lambda": "lam"}}


def build_from_dict(cls, data: dict, where: str):
    """Instantiate a config dataclass from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(data).__name__}")
    aliases = _KEY_ALIASES.get(cls, {})
    data = {aliases.get(k, k): v for k, v in data.items()}
    hints = get_type_hints(cls)
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown fields in {where}: {unknown}")
    kwargs = {}
    for key, value in data.items():
        nested_cls = _NESTED.get(cls, {}).get(key)
        if nested_cls is not None:
            value = build_from_dict(nested_cls, value, f"{where}.{key}")
        elif key in _TUPLE_FIELDS.get(cls, ()):
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{key} must be a JSON array")
            value = tuple(value)
        elif hints.get(key) is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass(frozen=True)
class AppConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    ttc: TtcParams = field(default_factory=TtcParams)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    training: TrainConfig = field(default_factory=TrainConfig)


_SECTIONS = {
    "scenario": ScenarioConfig,
    "ttc": TtcParams,
    "planner": PlannerConfig,
    "training": TrainConfig,
}


def _load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing config file: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return doc


def load_app_config(path=None) -> AppConfig:
    """Load the shared config document; a missing path means all defaults."""
    if path is None:
        return AppConfig()
    doc = _load_json(path)
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level sections: {unknown}")
    parts = {
        name: build_from_dict(cls, doc[name], name)
        for name, cls in _SECTIONS.items()
        if name in doc
    }
    return AppConfig(**parts)


def load_sweep_spec(path) -> SweepSpec:
    return build_from_dict(SweepSpec, _load_json(path), "sweep spec")
