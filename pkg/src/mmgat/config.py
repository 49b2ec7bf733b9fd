"""Flat run configuration shared by every CLI verb.

The on-disk form is a flat JSON object whose keys are exactly the field names
below; unknown keys are rejected.  Every command writes the resolved config
as ``config.json`` next to its outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .hetgat import HetGatConfig
from .pipeline import ModelConfig
from .synthetic import SyntheticConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # graph / model
    num_modalities: int = 4
    basic_per_modality: int = 4
    virtual_per_modality: int = 1
    grid: int = 16
    patch: int = 1
    num_classes: int = 5
    enc_hidden: int = 8
    dec_hidden: int = 16
    heads: int = 2
    gat_layers: int = 1
    activation: str = "elu"
    leaky_slope: float = 0.2
    mask_mode: str = "soft"
    soft_logit: float = -1e4
    gat_init: str = "identity"
    # ablations
    no_virtual: bool = False
    static_full_graph: bool = False
    homogeneous_weights: bool = False
    # optimisation
    steps: int = 2000
    lr0: float = 3e-3
    lr_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 50
    checkpoint_every: int = 0
    seed: int = 0
    # data
    num_samples: int = 2000  # fresh samples; the dense spatial W memorises small sets
    noise: float = 0.0
    data_seed: int = 0
    contrast_high: float = 1.0
    contrast_low: float = 0.3
    smoothness: float = 2.0
    # ablate verb
    ablate_variants: str = "full,no_virtual"
    ablate_seeds: str = "0,1,2"
    sweep_lengths: str = "0,1,2,4"
    eval_samples: int = 32
    eval_seed: int = 1000

    def __post_init__(self):
        try:
            self.model_config()
            self.data_config()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        try:
            self.variants()
            self.seeds()
            self.lengths()
        except ValueError as exc:
            raise ConfigError(f"bad ablate list: {exc}") from exc
        if self.eval_samples < 1:
            raise ConfigError("eval_samples must be >= 1")

    # -- derived configs ------------------------------------------------------
    def model_config(self) -> ModelConfig:
        gat = HetGatConfig(heads=self.heads, layers=self.gat_layers, activation=self.activation,
                           slope=self.leaky_slope, mask_mode=self.mask_mode,
                           soft_logit=self.soft_logit, homogeneous=self.homogeneous_weights,
                           init=self.gat_init)
        return ModelConfig(num_modalities=self.num_modalities,
                           basic_per_modality=self.basic_per_modality,
                           virtual_per_modality=0 if self.no_virtual else self.virtual_per_modality,
                           grid=self.grid, patch=self.patch, num_classes=self.num_classes,
                           enc_hidden=self.enc_hidden, dec_hidden=self.dec_hidden, gat=gat)

    def train_config(self) -> TrainConfig:
        return TrainConfig(steps=self.steps, lr0=self.lr0, lr_min=self.lr_min, beta1=self.beta1,
                           beta2=self.beta2, adam_eps=self.adam_eps, seed=self.seed,
                           static_graph=self.static_full_graph, log_every=self.log_every,
                           checkpoint_every=self.checkpoint_every)

    def data_config(self, seed: int | None = None, num_samples: int | None = None) -> SyntheticConfig:
        return SyntheticConfig(grid=self.grid, num_modalities=self.num_modalities,
                               num_classes=self.num_classes,
                               num_samples=self.num_samples if num_samples is None else num_samples,
                               seed=self.data_seed if seed is None else seed, noise=self.noise,
                               high=self.contrast_high, low=self.contrast_low,
                               smoothness=self.smoothness)

    def variants(self) -> list[str]:
        out = [v.strip() for v in self.ablate_variants.split(",") if v.strip()]
        unknown = set(out) - set(VARIANTS)
        if unknown:
            raise ValueError(f"unknown variants {sorted(unknown)}")
        return out

    def seeds(self) -> list[int]:
        return [int(s) for s in self.ablate_seeds.split(",") if s.strip()]

    def lengths(self) -> list[int]:
        return [int(s) for s in self.sweep_lengths.split(",") if s.strip()]

    def variant(self, name: str) -> "RunConfig":
        return replace(self, **VARIANTS[name])

    # -- persistence ----------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        clean = {}
        for key, value in data.items():
            default = known[key].default
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{key} must be true/false, got {value!r}")
            elif isinstance(default, int):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{key} must be an integer, got {value!r}")
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{key} must be a number, got {value!r}")
                value = float(value)
            elif isinstance(default, str) and not isinstance(value, str):
                raise ConfigError(f"{key} must be a string, got {value!r}")
            clean[key] = value
        return cls(**clean)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a flat JSON object")
        return cls.from_dict(data)


VARIANTS: dict[str, dict] = {
    "full": {},
    "no_virtual": {"no_virtual": True},
    "static_full_graph": {"static_full_graph": True},
    "homogeneous_weights": {"homogeneous_weights": True},
}
