"""Run configuration: a YAML file with ``--set dotted.key=value`` overrides.

Schema (every section optional, unknown keys rejected)::

    data:
      manifest: path/to/manifest.csv   # null: generate from the synth section
      root: null                       # sequence paths are relative to this (default: manifest dir)
    synth: {...}                       # SynthConfig fields
    model: {...}                       # ModelConfig fields
    train: {...}                       # TrainConfig fields; mask is a spec string such as hands+bbox+label
    output_dir: runs/default
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .featurize import parse_mask_spec
from .synth import SynthConfig
from .train_eval import TrainConfig
from .transformer import ModelConfig

SECTIONS = ("data", "synth", "model", "train", "output_dir")


@dataclass(frozen=True)
class DataConfig:
    manifest: str | None = None
    root: str | None = None


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        train = dataclasses.asdict(self.train)
        train["betas"] = list(self.train.betas)
        train["mask"] = self.train.mask.spec()
        return {
            "data": dataclasses.asdict(self.data),
            "synth": None if self.synth is None else self.synth.to_dict(),
            "model": self.model.to_dict(),
            "train": train,
            "output_dir": self.output_dir,
        }

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def apply_override(doc: dict, assignment: str) -> None:
    """Set ``a.b.c=value`` in ``doc``; the value is parsed as YAML."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like dotted.key=value, got {assignment!r}")
    parts = key.strip().split(".")
    node = doc
    for p in parts[:-1]:
        child = node.get(p)
        if child is None:
            child = node[p] = {}
        elif not isinstance(child, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a section")
        node = child
    try:
        node[parts[-1]] = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value in {assignment!r}: {e}") from None


def _build(cls, section: str, values: Any):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"bad value in {section}: {e}") from None


def _train_config(values) -> TrainConfig:
    values = dict(values or {})
    if "mask" in values:
        values["mask"] = parse_mask_spec(str(values["mask"]))
    if "betas" in values:
        betas = values["betas"]
        if not isinstance(betas, (list, tuple)) or len(betas) != 2:
            raise ConfigError("train.betas must be a pair")
        values["betas"] = tuple(float(b) for b in betas)
    return _build(TrainConfig, "train", values)


def from_dict(doc: dict | None) -> RunConfig:
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a mapping")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    data = _build(DataConfig, "data", doc.get("data"))
    synth = None if doc.get("synth") is None else _build(SynthConfig, "synth", doc["synth"])
    model = _build(ModelConfig, "model", doc.get("model"))
    train = _train_config(doc.get("train"))
    output_dir = doc.get("output_dir", RunConfig.output_dir)
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir must be a non-empty string")
    if data.manifest is None and synth is None:
        raise ConfigError("set data.manifest or provide a synth section")
    if synth is not None and synth.num_classes != model.num_classes:
        raise ConfigError(f"synth.num_classes={synth.num_classes} but model.num_classes={model.num_classes}")
    return RunConfig(data, synth, model, train, output_dir)


def load_config(path, overrides: list[str] | tuple[str, ...] = ()) -> RunConfig:
    """Read, override and validate a run config; referenced paths must exist."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config file must hold a mapping")
    for assignment in overrides:
        apply_override(doc, assignment)
    cfg = from_dict(doc)
    for name in ("manifest", "root"):
        value = getattr(cfg.data, name)
        if value is not None and not Path(value).exists():
            raise ConfigError(f"data.{name} does not exist: {value}")
    return cfg


def load_synth_config(path, overrides: list[str] | tuple[str, ...] = ()) -> SynthConfig:
    """SynthConfig from a YAML file holding either the fields or a ``synth`` section."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config file must hold a mapping")
    if "synth" in doc:
        doc = doc["synth"] or {}
    for assignment in overrides:
        apply_override(doc, assignment)
    return _build(SynthConfig, "synth", doc)
