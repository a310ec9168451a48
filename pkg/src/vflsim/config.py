"""Experiment configuration: nested dataclasses loaded from YAML.

Unknown keys are errors everywhere, so a typo in a sweep file fails loudly
instead of silently running the default.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .attacks import ActiveAttackConfig, DirectAttackConfig, PassiveAttackConfig
from .defenses import BaselineConfig, DefenseStack, GenoConfig, LadistillConfig, SgsubConfig
from .errors import ConfigError
from .metrics import parse_metric
from .protocol import SgdConfig


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    n: int = 2000
    d: int = 16
    num_classes: int = 4
    cluster_separation: float = 6.0
    noise_std: float = 1.0
    path: str | None = None
    label_column: str = "label"
    has_header: bool = True
    normalize: bool = True
    test_fraction: float = 0.25
    shuffle_labels: bool = False


@dataclass
class SplitConfig:
    parties: int = 2
    assignment: str = "contiguous_even"
    columns: list | None = None


@dataclass
class ModelConfig:
    embed_width: int = 8
    bottom_hidden: tuple[int, ...] = (16,)
    top_hidden: tuple[int, ...] = (16,)
    head: str = "softmax"


@dataclass
class DefenseConfig:
    geno: GenoConfig | None = None
    sgsub: SgsubConfig | None = None
    baseline: BaselineConfig | None = None
    ladistill: LadistillConfig | None = None


@dataclass
class ActiveSection:
    alpha: float = 10.0
    passive: PassiveAttackConfig = field(default_factory=PassiveAttackConfig)


@dataclass
class AttackConfig:
    passive: PassiveAttackConfig | None = None
    active: ActiveSection | None = None
    direct: DirectAttackConfig | None = None


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    attacks: AttackConfig = field(default_factory=AttackConfig)
    metric: str = "top1"
    adversary: int = 0
    owner_party: int = 1
    seeds: list = field(default_factory=lambda: [0])

# optional sections and the dataclass that fills them when present
_OPTIONAL = {
    (DefenseConfig, "geno"): GenoConfig,
    (DefenseConfig, "sgsub"): SgsubConfig,
    (DefenseConfig, "baseline"): BaselineConfig,
    (DefenseConfig, "ladistill"): LadistillConfig,
    (AttackConfig, "passive"): PassiveAttackConfig,
    (AttackConfig, "active"): ActiveSection,
    (AttackConfig, "direct"): DirectAttackConfig,
}
_NESTED = {
    (ExperimentConfig, "dataset"): DatasetConfig,
    (ExperimentConfig, "split"): SplitConfig,
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "sgd"): SgdConfig,
    (ExperimentConfig, "defense"): DefenseConfig,
    (ExperimentConfig, "attacks"): AttackConfig,
    (ActiveSection, "passive"): PassiveAttackConfig,
}

# defaults for the named presets; "ladsg" is the full stack
PRESETS: dict[str, dict[str, Any]] = {
    "none": {},
    "ladsg": {"geno": {}, "sgsub": {}, "ladistill": {}},
    "sgsub": {"sgsub": {}},
    "ladistill": {"ladistill": {}},
    "geno": {"geno": {}},
    "gc": {"baseline": {"kind": "gc", "value": 0.5}},
    "ng": {"baseline": {"kind": "ng", "value": 1e-3}},
    "mg": {"baseline": {"kind": "mg", "value": 12}},
    "ppdl": {"baseline": {"kind": "ppdl", "value": 0.5}},
}


def _coerce(value, default, where: str):
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, float) or (default is None and isinstance(value, str) and _is_number(value)):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if isinstance(default, int):
        if isinstance(value, str) and _is_number(value):
            value = float(value)
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(int(v) for v in value)
    return value


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _build(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(names)}")
    defaults = cls() if _has_all_defaults(cls) else _TYPE_TEMPLATES.get(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        key = f"{where}.{f.name}" if where else f.name
        value = data[f.name]
        if (cls, f.name) in _NESTED:
            kwargs[f.name] = _build(_NESTED[(cls, f.name)], value, key)
        elif (cls, f.name) in _OPTIONAL:
            kwargs[f.name] = None if value is None else _build(_OPTIONAL[(cls, f.name)], value, key)
        else:
            default = getattr(defaults, f.name) if defaults is not None else None
            kwargs[f.name] = _coerce(value, default, key)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _has_all_defaults(cls) -> bool:
    return all(
        f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING  # type: ignore[misc]
        for f in dataclasses.fields(cls)
    )


# dataclasses with required fields: instances used only to infer field types
_TYPE_TEMPLATES = {BaselineConfig: BaselineConfig("ng", 0.0)}


def _expand_defense(raw: dict) -> dict:
    raw = dict(raw or {})
    preset = raw.pop("preset", None)
    if preset is None:
        return raw
    if preset not in PRESETS:
        raise ConfigError(f"defense.preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    merged = copy.deepcopy(PRESETS[preset])
    for key, value in raw.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = copy.deepcopy(raw or {})
    raw.pop("sweep", None)
    if "defense" in raw:
        raw["defense"] = _expand_defense(raw["defense"])
    cfg = _build(ExperimentConfig, raw, "")
    validate_config(cfg)
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _plain(dataclasses.asdict(cfg))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def validate_config(cfg: ExperimentConfig) -> None:
    ds = cfg.dataset
    if ds.kind not in ("synthetic", "csv"):
        raise ConfigError(f"dataset.kind must be synthetic or csv, got {ds.kind!r}")
    if ds.kind == "csv" and not ds.path:
        raise ConfigError("dataset.path is required for csv datasets")
    if not 0 < ds.test_fraction < 1:
        raise ConfigError("dataset.test_fraction must be in (0, 1)")
    if cfg.split.assignment not in ("contiguous_even", "explicit"):
        raise ConfigError(f"split.assignment must be contiguous_even or explicit, got {cfg.split.assignment!r}")
    if cfg.split.assignment == "explicit" and not cfg.split.columns:
        raise ConfigError("split.columns is required for explicit assignment")
    parties = len(cfg.split.columns) if cfg.split.assignment == "explicit" else cfg.split.parties
    if not 0 <= cfg.adversary < parties:
        raise ConfigError(f"adversary index {cfg.adversary} out of range for {parties} parties")
    if not 0 <= cfg.owner_party < parties:
        raise ConfigError(f"owner_party index {cfg.owner_party} out of range for {parties} parties")
    if cfg.model.head not in ("softmax", "logistic"):
        raise ConfigError(f"model.head must be softmax or logistic, got {cfg.model.head!r}")
    if cfg.model.embed_width < 1:
        raise ConfigError("model.embed_width must be >= 1")
    cfg.sgd.validate()
    parse_metric(cfg.metric)
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    cfg.seeds = [int(s) for s in cfg.seeds]
    make_defense(cfg).validate()
    lad = cfg.defense.ladistill
    if lad is not None and ds.kind == "synthetic" and lad.k > ds.num_classes:
        raise ConfigError(f"defense.ladistill.k={lad.k} exceeds dataset.num_classes={ds.num_classes}")
    if cfg.attacks.passive is not None:
        cfg.attacks.passive.validate()
    if cfg.attacks.active is not None:
        ActiveAttackConfig(cfg.attacks.active.alpha).validate()
        cfg.attacks.active.passive.validate()
    if cfg.attacks.direct is not None:
        cfg.attacks.direct.validate()
        if cfg.model.head != "logistic" or cfg.model.top_hidden:
            raise ConfigError("the direct attack needs model.head: logistic and model.top_hidden: []")


def make_defense(cfg: ExperimentConfig) -> DefenseStack:
    d = cfg.defense
    return DefenseStack(
        geno=copy.deepcopy(d.geno),
        sgsub=copy.deepcopy(d.sgsub),
        baseline=copy.deepcopy(d.baseline),
        ladistill=copy.deepcopy(d.ladistill),
    )


def defense_label(cfg: ExperimentConfig) -> str:
    d = cfg.defense
    parts = []
    if d.geno is not None:
        parts.append("geno")
    if d.sgsub is not None:
        parts.append("sgsub")
    if d.baseline is not None:
        parts.append(d.baseline.kind)
    if d.ladistill is not None:
        parts.append("ladistill")
    return "+".join(parts) or "none"


def load_yaml(path) -> dict:
    with Path(path).open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def load_config(path) -> ExperimentConfig:
    return config_from_dict(load_yaml(path))
