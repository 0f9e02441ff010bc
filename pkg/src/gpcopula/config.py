"""Run configuration: one JSON document with ``train``, ``synth``, ``data`` and ``eval`` sections.

Every section is optional and every key has a default; unknown sections or
keys are rejected so that typos fail loudly instead of being ignored.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from gpcopula.errors import ConfigError
from gpcopula.synthetic import SyntheticSpec
from gpcopula.training import TrainConfig


@dataclass
class DataOptions:
    panel: str | None = None
    frequency: str = "hourly"
    domain: str | None = None  # "real", "count" or None to infer per series


@dataclass
class EvalOptions:
    windows: int = 1  # 0 forecasts past the end of the panel without scoring
    stride: int | None = None  # defaults to the horizon
    cov_trace: bool = False


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    data: DataOptions = field(default_factory=DataOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}


_SECTIONS = {"train": TrainConfig, "synth": SyntheticSpec, "data": DataOptions, "eval": EvalOptions}


def _build(cls, values: dict, section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from None


def from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    parts = {name: _build(cls, doc.get(name, {}), name) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**parts)
    if cfg.eval.windows < 0:
        raise ConfigError("eval.windows must be nonnegative")
    if cfg.eval.stride is not None and cfg.eval.stride < 1:
        raise ConfigError("eval.stride must be positive")
    return cfg


def load(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(doc)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply command-line overrides; ``None`` values leave the file setting in place."""
    train = {k: v for k, v in overrides.items() if v is not None and k in
             ("rank", "seed", "num_eval_samples", "horizon", "total_updates")}
    ev = {k: v for k, v in overrides.items() if v is not None and k in ("windows",)}
    synth = {}
    if overrides.get("seed") is not None:
        synth["seed"] = overrides["seed"]
    try:
        return RunConfig(
            dataclasses.replace(cfg.train, **train),
            dataclasses.replace(cfg.synth, **synth),
            cfg.data,
            dataclasses.replace(cfg.eval, **ev),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
