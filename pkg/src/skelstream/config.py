"""Model and training configuration with JSON round-tripping.

Configs are plain dataclasses. Validation happens in validate(), which every
loader calls; unknown keys and out-of-range values raise ConfigError rather
than being silently dropped.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError, ParseError

SOLVERS = ("euler", "midpoint", "rk4")


@dataclass
class ModelConfig:
    """Architecture description.

    edges is an optional explicit joint graph (list of [i, j] pairs); when
    omitted the star skeleton on num_joints is used.
    """

    num_joints: int = 6
    hidden_dim: int = 32
    num_layers: int = 2
    graph_heads: int = 2
    temporal_heads: int = 4
    future_steps: int = 2
    num_classes: int = 4
    max_frames: int = 16
    solver: str = "rk4"
    substeps: int = 1
    predictor: str = "ode"
    stop_grad_feat_target: bool = False
    pe_relative: bool = False
    edges: list | None = None

    def validate(self) -> "ModelConfig":
        if self.num_joints < 2:
            raise ConfigError(f"num_joints must be >= 2, got {self.num_joints}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be positive, got {self.hidden_dim}")
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.graph_heads < 1 or self.hidden_dim % self.graph_heads:
            raise ConfigError(
                f"graph_heads must divide hidden_dim ({self.hidden_dim}), "
                f"got {self.graph_heads}"
            )
        if self.temporal_heads < 1 or self.hidden_dim % self.temporal_heads:
            raise ConfigError(
                f"temporal_heads must divide hidden_dim ({self.hidden_dim}), "
                f"got {self.temporal_heads}"
            )
        if self.future_steps < 0:
            raise ConfigError(f"future_steps must be >= 0, got {self.future_steps}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.max_frames < 1:
            raise ConfigError(f"max_frames must be >= 1, got {self.max_frames}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.substeps < 1:
            raise ConfigError(f"substeps must be >= 1, got {self.substeps}")
        if self.predictor not in ("ode", "none"):
            raise ConfigError(
                f"predictor must be 'ode' or 'none', got {self.predictor!r}"
            )
        if self.edges is not None:
            for e in self.edges:
                if (not isinstance(e, (list, tuple)) or len(e) != 2
                        or any(not isinstance(v, int) for v in e)):
                    raise ConfigError(f"edges entries must be [i, j] int pairs, got {e}")
                i, j = e
                if i == j or not (0 <= i < self.num_joints) or not (0 <= j < self.num_joints):
                    raise ConfigError(f"edge {e} out of range for {self.num_joints} joints")
        return self


@dataclass
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 3e-4
    decay_epochs: list = field(default_factory=lambda: [50, 60])
    decay_factor: float = 0.1
    max_epochs: int = 70
    batch_size: int = 16
    lambda_pred: float = 0.1
    lambda_feat: float = 1e-3
    label_smoothing: float = 0.1
    seed: int = 0
    target_frames: int = 16

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lambda_pred < 0 or self.lambda_feat < 0:
            raise ConfigError("loss weights must be >= 0")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError(
                f"label_smoothing must be in [0, 1), got {self.label_smoothing}"
            )
        if self.target_frames < 1:
            raise ConfigError(f"target_frames must be >= 1, got {self.target_frames}")
        if any(not isinstance(e, int) or e < 1 for e in self.decay_epochs):
            raise ConfigError(f"decay_epochs must be positive ints, got {self.decay_epochs}")
        return self


def _from_dict(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        obj = cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return obj.validate()


def model_config_from_dict(data: dict) -> ModelConfig:
    return _from_dict(ModelConfig, data)


def train_config_from_dict(data: dict) -> TrainConfig:
    return _from_dict(TrainConfig, data)


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def load_config_file(path) -> tuple[ModelConfig, TrainConfig]:
    """Read a JSON file shaped {"model": {...}, "train": {...}}; both
    sections are optional and missing fields take their defaults.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    unknown = set(raw) - {"model", "train"}
    if unknown:
        raise ConfigError(f"unknown top-level config sections: {sorted(unknown)}")
    model = model_config_from_dict(raw.get("model", {}))
    train = train_config_from_dict(raw.get("train", {}))
    return model, train


def dump_config_file(path, model: ModelConfig, train: TrainConfig) -> None:
    with open(path, "w") as fh:
        json.dump({"model": to_dict(model), "train": to_dict(train)}, fh, indent=2)
        fh.write("\n")
