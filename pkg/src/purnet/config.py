"""Experiment configuration: encoder layout, training schedule, dataset paths.

Configs are plain dataclasses that round-trip through YAML. Loading is
strict: unknown keys are rejected so that typos in experiment files fail
loudly instead of silently training with defaults.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


@dataclass
class EncoderConfig:
    """Five-stage convolutional encoder layout.

    ``stage_strides`` are cumulative output strides relative to the input;
    the last two stages share a stride so the coarsest features keep a
    workable resolution, with dilation enlarging their receptive field
    instead.
    """

    stage_channels: tuple[int, ...] = (32, 64, 128, 256, 256)
    stage_strides: tuple[int, ...] = (2, 4, 8, 16, 16)
    stage_dilations: tuple[int, ...] = (1, 1, 1, 2, 4)
    lateral_channels: int = 128

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        self.stage_strides = tuple(self.stage_strides)
        self.stage_dilations = tuple(self.stage_dilations)
        if len(self.stage_channels) != 5:
            raise ConfigError("stage_channels must list exactly 5 stages")
        if len(self.stage_strides) != 5:
            raise ConfigError("stage_strides must list exactly 5 stages")
        if len(self.stage_dilations) != 5:
            raise ConfigError("stage_dilations must list exactly 5 stages")
        if any(c <= 0 for c in self.stage_channels):
            raise ConfigError("stage_channels must all be positive")
        if any(d < 1 for d in self.stage_dilations):
            raise ConfigError("stage_dilations must all be >= 1")
        if self.lateral_channels <= 0:
            raise ConfigError("lateral_channels must be positive")
        prev = 1
        for s in self.stage_strides:
            if s % prev != 0 or s // prev not in (1, 2):
                raise ConfigError(
                    "stage_strides must be cumulative with per-stage ratio 1 or 2, "
                    f"got {self.stage_strides}"
                )
            prev = s

    @property
    def output_stride(self) -> int:
        return self.stage_strides[-1]

    @classmethod
    def tiny(cls) -> "EncoderConfig":
        """Small layout for CPU experiments and tests."""
        return cls(stage_channels=(16, 32, 48, 64, 64), lateral_channels=32)


@dataclass
class TrainConfig:
    """Three-stage optimization schedule and SGD hyperparameters."""

    stage_iters: tuple[int, int, int] = (100, 200, 500)
    base_lr: float = 1e-3
    head_lr_multiplier: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    batch_size: int = 8
    input_size: int = 64
    seed: int = 0
    reference_mode: bool = True

    def __post_init__(self):
        self.stage_iters = tuple(int(n) for n in self.stage_iters)
        if len(self.stage_iters) != 3:
            raise ConfigError("stage_iters must list exactly 3 stages")
        if any(n < 0 for n in self.stage_iters):
            raise ConfigError("stage_iters must be nonnegative")
        for name in ("base_lr", "head_lr_multiplier", "momentum", "poly_power"):
            if getattr(self, name) <= 0 and name not in ("momentum",):
                raise ConfigError(f"{name} must be positive")
        if self.momentum < 0:
            raise ConfigError("momentum must be nonnegative")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.input_size < 1:
            raise ConfigError("input_size must be >= 1")


@dataclass
class DataConfig:
    """Dataset location and region-graph parameters used by the training loss."""

    root: str = ""
    n_regions: int = 256
    compactness: float = 10.0
    cache_dir: str | None = None

    def __post_init__(self):
        if self.n_regions < 1:
            raise ConfigError("n_regions must be >= 1")
        if self.compactness <= 0:
            raise ConfigError("compactness must be positive")


@dataclass
class ExperimentConfig:
    """Everything one training run needs, as serialized in the config file."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs/default"


def _build_section(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{path}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key '{path}.{unknown[0]}'")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad section '{path}': {exc}") from exc


def experiment_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    known = {"encoder", "train", "data", "output_dir"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}'")
    cfg = ExperimentConfig(
        encoder=_build_section(EncoderConfig, raw.get("encoder", {}), "encoder"),
        train=_build_section(TrainConfig, raw.get("train", {}), "train"),
        data=_build_section(DataConfig, raw.get("data", {}), "data"),
        output_dir=str(raw.get("output_dir", "runs/default")),
    )
    return cfg


def load_experiment(path: str | Path, require_data_root: bool = True) -> ExperimentConfig:
    """Load and validate an experiment config file (YAML)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    cfg = experiment_from_dict(raw)
    if require_data_root:
        if not cfg.data.root:
            raise ConfigError("data.root is required")
        if not Path(cfg.data.root).is_dir():
            raise ConfigError(f"data.root is not a directory: {cfg.data.root}")
    return cfg


def experiment_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    for section in ("encoder", "train"):
        for k, v in d[section].items():
            if isinstance(v, tuple):
                d[section][k] = list(v)
    return d


def save_experiment(cfg: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(experiment_to_dict(cfg), fh, sort_keys=False)


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of a config, stored in checkpoints for provenance."""
    canon = json.dumps(experiment_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()
