"""Layered run configuration.

Precedence: built-in defaults < config file < environment < explicit
overrides. Every consumed key is validated against the section
dataclasses; unknown sections or keys are rejected rather than ignored
so typos cannot silently fall back to defaults.

Environment variables use the form AVAMO_<SECTION>__<KEY>, e.g.
AVAMO_MODEL__D_MOT=32. Override strings use section.key=value.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .denoiser import DenoiserConfig
from .errors import ConfigError
from .training import LossWeights, OptimizerConfig

ENV_PREFIX = "AVAMO_"


@dataclass(frozen=True)
class ScheduleConfig:
    n_steps: int = 1000
    beta_min: float = 0.05
    beta_max: float = 20.0

    def __post_init__(self):
        if self.n_steps < 2:
            raise ConfigError("schedule.n_steps must be >= 2")
        if not 0.0 < self.beta_min <= self.beta_max:
            raise ConfigError("schedule requires 0 < beta_min <= beta_max")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    seed: int = 0
    log_every: int = 50
    audio_dropout: float = 0.0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ConfigError("train.steps, batch_size, log_every must be >= 1")
        if not 0.0 <= self.audio_dropout <= 1.0:
            raise ConfigError("train.audio_dropout must be in [0, 1]")


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 150
    seed: int = 0
    frames: int = 100

    def __post_init__(self):
        if self.steps < 1 or self.frames < 1:
            raise ConfigError("sample.steps and frames must be >= 1")


_SECTIONS = {
    "model": DenoiserConfig,
    "schedule": ScheduleConfig,
    "loss": LossWeights,
    "optimizer": OptimizerConfig,
    "train": TrainConfig,
    "sample": SampleConfig,
}


@dataclass(frozen=True)
class RunConfig:
    model: DenoiserConfig = DenoiserConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    loss: LossWeights = LossWeights()
    optimizer: OptimizerConfig = OptimizerConfig()
    train: TrainConfig = TrainConfig()
    sample: SampleConfig = SampleConfig()

    def to_json_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _coerce(section: str, key: str, value, target_type) -> object:
    if isinstance(value, target_type) and not (
        target_type is float and isinstance(value, bool)
    ):
        return value
    text = str(value)
    try:
        if target_type is bool:
            lowered = text.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(
            f"{section}.{key}: cannot parse {value!r} as {target_type.__name__}"
        ) from None


def _field_types(section_cls) -> dict[str, type]:
    out = {}
    for f in dataclasses.fields(section_cls):
        default = f.default
        if default is dataclasses.MISSING:
            raise ConfigError(f"section field {f.name} has no default")
        out[f.name] = type(default)
    return out


def _apply(
    values: dict[str, dict], touched: set[str], section: str, key: str, raw
) -> None:
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    types = _field_types(_SECTIONS[section])
    if key not in types:
        raise ConfigError(f"unknown config key {section}.{key}")
    values[section][key] = _coerce(section, key, raw, types[key])
    touched.add(f"{section}.{key}")


def _env_layers(environ: Mapping[str, str]) -> list[tuple[str, str, str]]:
    out = []
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        body = name[len(ENV_PREFIX):]
        section, _, key = body.partition("__")
        out.append((section.lower(), key.lower(), value))
    return out


def load_config(
    file_path=None,
    overrides: Iterable[str] = (),
    environ: Optional[Mapping[str, str]] = None,
) -> tuple[RunConfig, set[str]]:
    """Build a RunConfig from the precedence layers.

    Returns the config plus the set of "section.key" names that any
    layer explicitly set (callers use it to distinguish user choices
    from defaults).
    """
    values = {
        name: dataclasses.asdict(cls()) for name, cls in _SECTIONS.items()
    }
    touched: set[str] = set()

    if file_path is not None:
        try:
            raw = json.loads(Path(file_path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {file_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        for section, body in raw.items():
            if not isinstance(body, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            for key, value in body.items():
                _apply(values, touched, section, key, value)

    environ = os.environ if environ is None else environ
    for section, key, value in _env_layers(environ):
        _apply(values, touched, section, key, value)

    for item in overrides:
        target, sep, raw = item.partition("=")
        if not sep or "." not in target:
            raise ConfigError(
                f"override must look like section.key=value, got {item!r}"
            )
        section, _, key = target.partition(".")
        _apply(values, touched, section.strip(), key.strip(), raw)

    sections = {name: cls(**values[name]) for name, cls in _SECTIONS.items()}
    return RunConfig(**sections), touched


def replace_key(config: RunConfig, dotted: str, value) -> RunConfig:
    """Return a copy of config with one section.key replaced."""
    section, _, key = dotted.partition(".")
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    old = getattr(config, section)
    if key not in {f.name for f in dataclasses.fields(old)}:
        raise ConfigError(f"unknown config key {dotted}")
    return dataclasses.replace(
        config, **{section: dataclasses.replace(old, **{key: value})}
    )
