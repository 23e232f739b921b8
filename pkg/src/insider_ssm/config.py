"""Hyperparameter dataclasses and TOML/JSON config loading."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class FeatureConfig:
    alpha: float = 0.2  # EWMA decay for inter-event gaps
    work_start_hour: int = 8
    work_end_hour: int = 18
    t_max: int = 512
    timezone: str = "UTC"
    internal_domains: tuple[str, ...] = ("dtaa.com",)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if not 0 <= self.work_start_hour < self.work_end_hour <= 24:
            raise ConfigError("working hours must satisfy 0 <= start < end <= 24")
        if self.t_max < 1:
            raise ConfigError("t_max must be positive")
        self.internal_domains = tuple(self.internal_domains)


@dataclass
class ModelConfig:
    d_model: int = 64
    n_state: int = 16
    n_layers: int = 2
    expand: int = 2
    hidden: int = 128
    head_layers: int = 3
    n_stats: int = 22
    n_ids: int = 192
    stat_tokens: str = "per_feature"  # or "pooled"
    residual: str = "paper"  # or "mix_only"
    ln_eps: float = 1e-5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.d_model < 1 or self.n_state < 1 or self.n_layers < 1:
            raise ConfigError("d_model, n_state and n_layers must be positive")
        if self.head_layers not in (2, 3):
            raise ConfigError("head_layers must be 2 or 3")
        if self.stat_tokens not in ("per_feature", "pooled"):
            raise ConfigError("stat_tokens must be 'per_feature' or 'pooled'")
        if self.residual not in ("paper", "mix_only"):
            raise ConfigError("residual must be 'paper' or 'mix_only'")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model


@dataclass
class TrainConfig:
    lambda_gate: float = 0.01
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    lr_schedule: str = "cosine"  # or "constant"
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float | None = 5.0
    seed: int = 0
    split: float = 0.8
    smote: str = "stats"  # or "duplicate" / "off"
    smote_k: int = 5

    def __post_init__(self):
        if self.lambda_gate < 0:
            raise ConfigError("lambda_gate must be non-negative")
        if not 0.0 < self.split < 1.0:
            raise ConfigError("split must lie in (0, 1)")
        if self.smote not in ("stats", "duplicate", "off"):
            raise ConfigError("smote must be 'stats', 'duplicate' or 'off'")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError("lr_schedule must be 'cosine' or 'constant'")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        self.betas = tuple(self.betas)


@dataclass
class DetectConfig:
    threshold_scope: str = "user"  # or "user_day"
    fallback: float = 0.5
    guard: str = "straddle"  # or "none"

    def __post_init__(self):
        if self.threshold_scope not in ("user", "user_day"):
            raise ConfigError("threshold_scope must be 'user' or 'user_day'")
        if self.guard not in ("straddle", "none"):
            raise ConfigError("guard must be 'straddle' or 'none'")


@dataclass
class Config:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        sections = {
            "features": FeatureConfig,
            "model": ModelConfig,
            "train": TrainConfig,
            "detect": DetectConfig,
        }
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, klass in sections.items():
            values = dict(data.get(name, {}))
            known = {f.name for f in dataclasses.fields(klass)}
            bad = set(values) - known
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            kwargs[name] = klass(**values)
        return cls(**kwargs)


def load_config(path: str | Path | None) -> Config:
    """Load a TOML or JSON config; missing keys keep their defaults."""
    if path is None:
        return Config()
    path = Path(path)
    if path.suffix == ".toml":
        data = tomllib.loads(path.read_text())
    elif path.suffix == ".json":
        data = json.loads(path.read_text())
    else:
        raise ConfigError(f"config must be .toml or .json: {path}")
    return Config.from_dict(data)
