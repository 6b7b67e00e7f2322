"""Run configuration: one flat record covering training, ensemble fitting
and evaluation. JSON files hold partial configs; defaults are materialized
when resolving, and the resolved result is what a run directory persists.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Any, Mapping

from .errors import ConfigError
from .store import MODALITIES, config_hash

TEMPERATURE_GRID = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    dim: int = 200
    learning_rate: float = 0.1
    batch_size: int = 1000
    max_epochs: int = 200
    temperature: float = 4.0
    n3_weight: float = 0.0
    tie_relations: bool = False
    patience: int = 10
    modalities: tuple[str, ...] = MODALITIES
    threads: int = 1
    # Boosting inference.
    boost_pair_cap: int = 500
    boost_epsilon: float = 1e-10
    # Meta-learner inference.
    meta_hidden: int = 100
    meta_learning_rate: float = 0.01
    meta_epochs: int = 50
    meta_patience: int = 10

    def __post_init__(self) -> None:
        self.modalities = tuple(self.modalities)
        self.validate()

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.meta_hidden < 1:
            raise ConfigError(f"meta_hidden must be >= 1, got {self.meta_hidden}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.boost_pair_cap < 1:
            raise ConfigError(f"boost_pair_cap must be >= 1, got {self.boost_pair_cap}")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            raise ConfigError(f"unknown modalities: {sorted(unknown)}")
        if not self.modalities:
            raise ConfigError("at least one modality is required")

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["modalities"] = list(self.modalities)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(data)


def save_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
