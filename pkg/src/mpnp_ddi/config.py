"""Training and run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigValidationError(ValueError):
    pass


@dataclass
class TrainConfig:
    num_blocks: int = 3  # K
    iterations: int = 2  # T
    hidden_dim: int = 32  # d_h = d_kge
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    epochs: int = 20
    batch_size: int = 8
    accumulation_steps: int = 4
    lambda_unc: float = 0.1
    lambda_kl: float = 0.01
    seed: int = 0
    relation_module_enabled: bool = True
    # "final": uncertainty head reads the fused embeddings; "multiscale": all K scale vectors
    uncertainty_input: str = "final"
    shuffle: bool = True
    # evaluation-mode batch norm during training (needed for accumulation-equivalence checks)
    freeze_batchnorm: bool = False

    def validate(self):
        for name in ("num_blocks", "iterations", "hidden_dim", "epochs", "batch_size",
                     "accumulation_steps"):
            if int(getattr(self, name)) < 1:
                raise ConfigValidationError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigValidationError("learning_rate must be positive")
        for name in ("weight_decay", "lambda_unc", "lambda_kl"):
            if getattr(self, name) < 0:
                raise ConfigValidationError(f"{name} must be >= 0")
        if self.uncertainty_input not in ("final", "multiscale"):
            raise ConfigValidationError("uncertainty_input must be 'final' or 'multiscale'")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigValidationError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**data).validate()


@dataclass
class RunConfig:
    """Flat JSON run file: every TrainConfig key plus paths and evaluation options."""

    drugs_path: str
    pairs_path: str
    output_dir: str
    train: TrainConfig = field(default_factory=TrainConfig)
    split_mode: str = "transductive"
    split_ratios: tuple = (0.8, 0.1, 0.1)
    inductive_drug_ratio: float = 0.8
    inductive_train_fraction: float = 1.0
    negative_ratio: float = 1.0
    threshold: float = 0.5

    _RUN_KEYS = ("drugs_path", "pairs_path", "output_dir", "split_mode", "split_ratios",
                 "inductive_drug_ratio", "inductive_train_fraction", "negative_ratio",
                 "threshold")

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigValidationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigValidationError(f"{path}: top level must be an object")
        train_keys = {f.name for f in fields(TrainConfig)}
        unknown = set(data) - train_keys - set(cls._RUN_KEYS)
        if unknown:
            raise ConfigValidationError(f"unknown config keys: {sorted(unknown)}")
        for key in ("drugs_path", "pairs_path", "output_dir"):
            if key not in data:
                raise ConfigValidationError(f"missing config key {key!r}")
        base = path.parent
        run = cls(
            drugs_path=str(base / data["drugs_path"]),
            pairs_path=str(base / data["pairs_path"]),
            output_dir=str(base / data["output_dir"]),
            train=TrainConfig.from_dict({k: v for k, v in data.items() if k in train_keys}),
            **{k: (tuple(v) if k == "split_ratios" else v) for k, v in data.items()
               if k in cls._RUN_KEYS and k not in ("drugs_path", "pairs_path", "output_dir")},
        )
        run.validate()
        return run

    def validate(self):
        for key in ("drugs_path", "pairs_path"):
            if not Path(getattr(self, key)).is_file():
                raise ConfigValidationError(f"{key}: no such file {getattr(self, key)}")
        if self.split_mode not in ("transductive", "inductive"):
            raise ConfigValidationError("split_mode must be 'transductive' or 'inductive'")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigValidationError("split_ratios must be three numbers summing to 1")
        if not 0 < self.inductive_drug_ratio <= 1:
            raise ConfigValidationError("inductive_drug_ratio must lie in (0, 1]")
        if not 0 < self.inductive_train_fraction <= 1:
            raise ConfigValidationError("inductive_train_fraction must lie in (0, 1]")
        if self.negative_ratio < 0:
            raise ConfigValidationError("negative_ratio must be >= 0")
        self.train.validate()
        return self
