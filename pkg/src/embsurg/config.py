"""Declarative experiment configuration loaded from a YAML file.

Every field has a default; a config file only lists what it changes.
Precedence (lowest first): defaults, config file, CLI flags, EMBSURG_SEED.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .nets import ClassifierConfig, ClassifierTrainConfig, GANTrainConfig, GeneratorConfig
from .seeding import env_seed
from .synthdata import DatasetSpec


@dataclass(frozen=True)
class OptimizationDefaults:
    """Embedding-optimization settings shared by every experiment."""

    steps: int = 200
    resample_interval: int = 20
    batch_size: int = 20
    num_pairs: int = 10
    trials: int = 5
    lr_small: float = 0.01
    lr_large: float = 0.1
    lam: float = 2.0
    phi: str = "softmax"
    radius: float = 0.1
    init_distribution: str = "uniform-ball"


@dataclass(frozen=True)
class MetricOptions:
    n_images: int = 1000
    n_pairs: int = 200
    is_splits: int = 10
    mix_each: int = 500
    selection_rule: str = "best-perceptual"


@dataclass(frozen=True)
class ExperimentOptions:
    """Class choices and sweep grids for the individual experiments."""

    repair_class: int = 1
    low_diversity_classes: tuple = (0, 1, 2, 3, 4)
    scale_down_sigma: float = 0.1
    noise_sigmas: tuple = (0.1, 0.3)
    finetune_iters: int = 10
    repurpose_classes: tuple = (0, 1, 2, 3, 4)
    repurpose_top_k: int = 5
    lambdas: tuple = (2.0, 10.0, 100.0)
    phis: tuple = ("pixel", "midlayer", "softmax")
    interpolation_steps: int = 8


def _default_source():
    return DatasetSpec(domain_id="A", samples_per_class=500, seed=1, diversity_knob=0.5)


def _default_classifier_data():
    return DatasetSpec(domain_id="A", samples_per_class=500, seed=2, diversity_knob=1.0)


def _default_target():
    return DatasetSpec(domain_id="B", num_classes=7, samples_per_class=300, seed=3, diversity_knob=1.0)


def _default_real_reference():
    return DatasetSpec(domain_id="A", samples_per_class=200, seed=4, diversity_knob=0.5)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    gan_data: DatasetSpec = field(default_factory=_default_source)
    classifier_data: DatasetSpec = field(default_factory=_default_classifier_data)
    reference_data: DatasetSpec = field(default_factory=_default_real_reference)
    target_data: DatasetSpec = field(default_factory=_default_target)
    generator: GeneratorConfig = GeneratorConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    gan_train: GANTrainConfig = GANTrainConfig()
    classifier_train: ClassifierTrainConfig = ClassifierTrainConfig()
    optimization: OptimizationDefaults = OptimizationDefaults()
    metrics: MetricOptions = MetricOptions()
    experiments: ExperimentOptions = ExperimentOptions()

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def digest(self) -> str:
        """Short hash of the full config; recorded in every artifact's provenance."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def validate(self) -> "ExperimentConfig":
        for spec in (self.gan_data, self.classifier_data, self.reference_data, self.target_data):
            spec.validate()
        if self.gan_data.num_classes != self.generator.num_classes:
            raise ConfigurationError("generator.num_classes must match gan_data.num_classes", "generator.num_classes")
        if self.classifier_data.num_classes != self.classifier.num_classes:
            raise ConfigurationError("classifier.num_classes must match classifier_data", "classifier.num_classes")
        if self.optimization.trials < 1:
            raise ConfigurationError("optimization.trials must be >= 1", "optimization.trials")
        return self


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, data: dict, path: str):
    """Instantiate dataclass ``cls`` from a (possibly partial) mapping."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or 'config'} must be a mapping", path)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    base = cls()
    kw = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigurationError(f"unknown config key {path + key!r}", path + key)
        current = getattr(base, key)
        if dataclasses.is_dataclass(current):
            merged = {**dataclasses.asdict(current), **(value or {})}
            kw[key] = _build(type(current), merged, f"{path}{key}.")
        elif isinstance(current, tuple) and isinstance(value, list):
            kw[key] = tuple(value)
        else:
            kw[key] = value
    try:
        return cls(**{**{k: getattr(base, k) for k in fields}, **kw})
    except TypeError as exc:
        raise ConfigurationError(str(exc), path) from None


def from_dict(data: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "").validate()


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults <- YAML file <- dotted ``overrides`` <- EMBSURG_SEED."""
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}", "config") from None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse config file: {exc}", "config") from None
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    cfg = from_dict(data)
    seed = env_seed()
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
