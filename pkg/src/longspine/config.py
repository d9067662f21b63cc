"""Experiment configuration: nested dataclasses with a flat, diff-friendly
``section.key = json-value`` text form that round-trips losslessly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .synth import GeneratorConfig
from .train import TrainConfig
from .volumes import DataError, GeometryConfig


class ConfigError(ValueError):
    pass


@dataclass
class Seeds:
    generator: int = 1
    split: int = 2
    init: int = 3
    epoch: int = 4


@dataclass
class ExperimentConfig:
    geometry_mode: str = "reduced"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    # augmentation ranges at the full 224-wide canvas scale; pixel ranges are
    # shrunk proportionally when a reduced geometry is in use
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    siamese: TrainConfig = field(default_factory=TrainConfig)
    classifier: TrainConfig = field(
        default_factory=lambda: TrainConfig(batch_size=128, lr=1e-3, augment_enabled=False)
    )
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    grading_ratios: tuple[float, float, float] = (0.729, 0.054, 0.217)
    curve_sizes: tuple[int, ...] = ()  # empty: derived from the training pool
    curve_fractions: tuple[float, float, float] = (0.36, 0.54, 1.0)
    curve_repetitions: int = 3
    seeds: Seeds = field(default_factory=Seeds)

    def geometry(self) -> GeometryConfig:
        return GeometryConfig.named(self.geometry_mode)


_SECTIONS = ("generator", "augment", "siamese", "classifier", "seeds")


def _leaf_fields(cfg: ExperimentConfig):
    """(dotted key, owner object, field) triples in a stable order."""
    out = []
    for f in dataclasses.fields(cfg):
        if f.name in _SECTIONS:
            sub = getattr(cfg, f.name)
            for sf in dataclasses.fields(sub):
                out.append((f"{f.name}.{sf.name}", sub, sf))
        else:
            out.append((f.name, cfg, f))
    return sorted(out, key=lambda t: t[0])


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for key, owner, f in _leaf_fields(cfg):
        value = getattr(owner, f.name)
        if isinstance(value, tuple):
            value = list(value)
        lines.append(f"{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


def _coerce(value, annotation):
    if typing.get_origin(annotation) is tuple:
        return tuple(value)
    return value


def config_from_text(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    known = {key: (owner, f) for key, owner, f in _leaf_fields(cfg)}
    hints_cache: dict[type, dict] = {}
    updates: dict[str, dict] = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"line {ln}: unknown configuration key {key!r}")
        try:
            value = json.loads(rhs.strip())
        except json.JSONDecodeError as e:
            raise ConfigError(f"line {ln}: invalid value for {key}: {e}") from e
        owner, f = known[key]
        owner_type = type(owner)
        if owner_type not in hints_cache:
            hints_cache[owner_type] = typing.get_type_hints(owner_type)
        section, _, name = key.rpartition(".")
        updates.setdefault(section, {})[name] = _coerce(value, hints_cache[owner_type].get(name))

    top_kwargs = updates.pop("", {})
    for section, kwargs in updates.items():
        default = getattr(cfg, section)
        top_kwargs[section] = dataclasses.replace(default, **kwargs)
    try:
        return dataclasses.replace(cfg, **top_kwargs)
    except (TypeError, ValueError, DataError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_config(path: str | Path) -> ExperimentConfig:
    return config_from_text(Path(path).read_text())


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_text(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()[:16]
