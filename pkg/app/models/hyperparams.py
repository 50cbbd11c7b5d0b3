from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional

from ..errors import ConfigError


@dataclass(frozen=True)
class Hyperparams:
    """Sizes of the three shared LSTMs and the embeddings; dropout rate."""
    hidden: int = 64            # nodeRNN
    spatial_hidden: int = 64    # spatial edgeRNN
    temporal_hidden: int = 64   # temporal edgeRNN
    embed: int = 32
    dropout: float = 0.5

    def validate(self) -> "Hyperparams":
        for name in ("hidden", "spatial_hidden", "temporal_hidden", "embed"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameter(s): {sorted(unknown)}")
        return cls(**data).validate()


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr0: float = 0.0005
    decay: float = 0.99
    grad_clip: Optional[float] = 5.0   # max global L2 norm; None disables
    seed: int = 0
    shuffle: bool = True
    seq_len: int = 10

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr0 > 0.0:
            raise ConfigError(f"initial learning rate must be > 0, got {self.lr0}")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError(f"decay must lie in (0, 1], got {self.decay}")
        if self.grad_clip is not None and not self.grad_clip > 0.0:
            raise ConfigError(f"grad clip must be > 0 when set, got {self.grad_clip}")
        if self.seq_len < 1:
            raise ConfigError(f"sequence length must be >= 1, got {self.seq_len}")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)
