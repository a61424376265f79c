"""Experiment configuration files (YAML or JSON) and the shipped presets."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .attacks import AttackError
from .data.distortions import DistortionError
from .data.synth import FAMILIES, DatasetConfig, DatasetConfigError
from .evaluation import EvalError, parse_condition
from .training import REGIMES, TrainConfig, TrainConfigError

PRESETS = ("leave_one_out", "defense_matrix", "ablation", "distortion")
SPLIT_KINDS = ("by_video", "leave_one_out")
_TOP_LEVEL = {"name", "seed", "out", "dataset", "train", "conditions", "split", "runs", "sweep"}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the offending field."""


def config_hash(obj: Any) -> str:
    """Short sha256 of the canonical JSON form of ``obj``."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _check_split(split: dict, where: str, need_family: bool = True) -> dict:
    if not isinstance(split, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(split).__name__}")
    split = {"kind": "by_video", "test_fraction": 0.3, **split}
    if split["kind"] not in SPLIT_KINDS:
        raise ConfigError(f"{where}.kind: must be one of {SPLIT_KINDS}, got {split['kind']!r}")
    # a base split may leave the family to each run
    family = split.get("family")
    if split["kind"] == "leave_one_out" and (need_family or family is not None) and family not in FAMILIES:
        raise ConfigError(f"{where}.family: must be one of {list(FAMILIES)}, got {split.get('family')!r}")
    if not 0.0 < float(split["test_fraction"]) < 1.0:
        raise ConfigError(f"{where}.test_fraction: must be in (0, 1), got {split['test_fraction']}")
    return split


@dataclass(frozen=True)
class RunSpec:
    """One training run of an experiment: a name, a train config and a split."""

    name: str
    train: TrainConfig
    split: dict

    def to_dict(self) -> dict:
        return {"name": self.name, "train": self.train.to_dict(), "split": dict(self.split)}


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    conditions: list[str] = field(default_factory=lambda: ["clean", "pgd10"])
    split: dict = field(default_factory=lambda: {"kind": "by_video", "test_fraction": 0.3})
    runs: list[dict] = field(default_factory=list)
    sweep: bool = False
    out: str = "runs"
    seed: int = 0
    name: str = "experiment"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError(f"config: expected a mapping at top level, got {type(d).__name__}")
        extra = set(d) - _TOP_LEVEL
        if extra:
            raise ConfigError(f"{sorted(extra)[0]}: unknown top-level field (known: {sorted(_TOP_LEVEL)})")
        seed = d.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError(f"seed: must be an integer, got {seed!r}")
        try:
            dataset = DatasetConfig.from_dict(dict(d.get("dataset") or {}))
        except (DatasetConfigError, TypeError) as exc:
            raise ConfigError(f"dataset: {exc}") from None
        train_d = dict(d.get("train") or {})
        train_d.setdefault("seed", seed)
        train = _train_config(train_d, "train")
        conditions = d.get("conditions", ["clean", "pgd10"])
        if not isinstance(conditions, list) or not conditions:
            raise ConfigError("conditions: must be a non-empty list")
        for i, c in enumerate(conditions):
            try:
                parse_condition(str(c))
            except (EvalError, AttackError, DistortionError) as exc:
                raise ConfigError(f"conditions[{i}]: {exc}") from None
        cfg = cls(
            dataset=dataset,
            train=train,
            conditions=[str(c) for c in conditions],
            split=_check_split(dict(d.get("split") or {}), "split", need_family=not d.get("runs")),
            runs=list(d.get("runs") or []),
            sweep=bool(d.get("sweep", False)),
            out=str(d.get("out", "runs")),
            seed=seed,
            name=str(d.get("name", "experiment")),
        )
        cfg.run_specs()  # validates every run entry
        return cfg

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "out": self.out,
            "dataset": self.dataset.to_dict(),
            "train": self.train.to_dict(),
            "conditions": list(self.conditions),
            "split": dict(self.split),
            "runs": copy.deepcopy(self.runs),
            "sweep": self.sweep,
        }

    def digest(self) -> str:
        return config_hash(self.to_dict())

    def with_seed(self, seed: int) -> "ExperimentConfig":
        d = self.to_dict()
        d["seed"] = seed
        d["train"]["seed"] = seed
        for run in d["runs"]:
            if "train" in run:
                run["train"].pop("seed", None)
        return ExperimentConfig.from_dict(d)

    def run_specs(self) -> list[RunSpec]:
        """Expand ``runs`` (overrides on top of ``train``/``split``) into concrete runs."""
        if not self.runs:
            return [RunSpec(self.train.regime, self.train, dict(self.split))]
        specs = []
        base = self.train.to_dict()
        for i, run in enumerate(self.runs):
            where = f"runs[{i}]"
            if not isinstance(run, dict):
                raise ConfigError(f"{where}: expected a mapping")
            unknown = set(run) - {"name", "train", "split"}
            if unknown:
                raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown field")
            train = _train_config({**base, **dict(run.get("train") or {})}, f"{where}.train")
            split = _check_split({**self.split, **dict(run.get("split") or {})}, f"{where}.split")
            specs.append(RunSpec(str(run.get("name", f"run{i}")), train, split))
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ConfigError("runs: run names must be unique")
        return specs


def _train_config(d: dict, where: str) -> TrainConfig:
    if "regime" in d and d["regime"] not in REGIMES:
        raise ConfigError(f"{where}.regime: must be one of {list(REGIMES)}, got {d['regime']!r}")
    try:
        return TrainConfig.from_dict(d)
    except (TrainConfigError, AttackError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an experiment config; ``.json`` is parsed as JSON, anything else as YAML."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}") from None
    return ExperimentConfig.from_dict(data or {})


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r}; known: {list(PRESETS)}")
    return Path(str(resources.files("afsl") / "presets" / f"{name}.yaml"))


def load_preset(name: str) -> ExperimentConfig:
    return load_config(preset_path(name))
