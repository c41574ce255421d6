"""Run configuration: one flat, JSON-serializable record shared by all commands.

Every source of randomness gets its own named seed so each pipeline stage can
be reproduced in isolation. A run's resolved config is archived next to its
outputs; equal configs (seeds included) must yield equal outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    # Paths.
    manifest: str = ""
    synthetic_manifest: str = ""
    checkpoint: str = ""
    output_dir: str = "runs/out"

    # Diffusion model + training.
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    base_width: int = 32
    depth: int = 2
    time_embed_dim: int = 64
    learning_rate: float = 1e-5
    batch_size: int = 8
    epochs: int = 300
    ema: bool = False
    ema_decay: float = 0.999
    resume: bool = False
    preview_every: int = 0  # epochs between preview grids; 0 = auto cadence
    diffusion_seed: int = 0

    # Sampling.
    sample_steps: int = 0  # 0 = use the full schedule
    samples_per_annotation: int = 1
    sample_limit: int = 0  # cap on annotation rows; 0 = all
    ablate_conditioning: bool = False  # zero the conditioning channels
    sampling_seed: int = 0

    # Metrics.
    class_agnostic: bool = False

    # Downstream segmentation comparison.
    downstream_epochs: int = 20
    downstream_lr: float = 1e-3
    downstream_batch_size: int = 16
    per_class: bool = False
    downstream_seed: int = 0

    # Toy dataset generation.
    toy_count: int = 500
    toy_height: int = 32
    toy_width: int = 32
    toy_defect_classes: int = 2
    toy_boxes_min: int = 1
    toy_boxes_max: int = 2
    split_fractions: tuple[float, float, float] = (0.7, 0.2, 0.1)
    data_seed: int = 0

    def validate(self) -> None:
        if self.num_steps < 1:
            raise ConfigError(f"num_steps must be >= 1, got {self.num_steps}")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ConfigError(
                f"need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}"
            )
        if self.batch_size < 1 or self.downstream_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.epochs < 0 or self.downstream_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.learning_rate <= 0 or self.downstream_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ConfigError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.sample_steps < 0 or self.sample_steps > self.num_steps:
            raise ConfigError(
                f"sample_steps must be in 0..num_steps, got {self.sample_steps}"
            )
        if self.samples_per_annotation < 1:
            raise ConfigError("samples_per_annotation must be >= 1")
        if self.sample_limit < 0:
            raise ConfigError("sample_limit must be >= 0")
        if self.toy_count < 1 or self.toy_height < 8 or self.toy_width < 8:
            raise ConfigError("toy dataset dimensions too small")
        if self.toy_defect_classes < 1:
            raise ConfigError("need at least one defect class")
        if not (1 <= self.toy_boxes_min <= self.toy_boxes_max):
            raise ConfigError("need 1 <= toy_boxes_min <= toy_boxes_max")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split_fractions must be 3 values summing to 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "split_fractions" in kwargs:
            kwargs["split_fractions"] = tuple(kwargs["split_fractions"])
        try:
            config = cls(**kwargs)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        config.validate()
        return config

    @classmethod
    def load(cls, path: Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def apply_overrides(self, overrides: list[str]) -> "RunConfig":
        """Apply ``key=value`` strings; values parse as JSON, else raw string."""
        data = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            if key not in data:
                raise ConfigError(f"unknown config key in override: {key}")
            try:
                data[key] = json.loads(raw)
            except json.JSONDecodeError:
                data[key] = raw
        return RunConfig.from_dict(data)
