"""Training hyperparameters.

The defaults are the tuned recipe this harness ships with; the "alternate"
preset is a more conservative variant (lower learning rate, heavier LoRA
dropout). Every field can be overridden per run.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

__all__ = ["TrainConfig", "ConfigError", "PRESETS", "preset"]


class ConfigError(ValueError):
    """A TrainConfig field is out of range or inconsistent."""


@dataclass(frozen=True, slots=True)
class TrainConfig:
    base_model_id: str = "tiny-gpt2"
    lora_r: int = 64
    lora_alpha: float = 16.0
    lora_dropout: float = 0.1
    lr: float = 2e-4
    epochs: int = 15
    per_device_batch: int = 8
    grad_accum: int = 2
    warmup_ratio: float = 0.03
    weight_decay: float = 0.001
    scheduler: str = "cosine"
    seed: int = 42
    max_grad_norm: float = 0.3
    # Recorded for parity with larger-scale runs; ignored at toy scale.
    load_in_4bit: bool = False

    def __post_init__(self) -> None:
        if not self.base_model_id:
            raise ConfigError("base_model_id must be non-empty")
        if self.lora_r < 1:
            raise ConfigError(f"lora_r must be >= 1, got {self.lora_r}")
        if self.lora_alpha <= 0:
            raise ConfigError(f"lora_alpha must be > 0, got {self.lora_alpha}")
        if not 0.0 <= self.lora_dropout < 1.0:
            raise ConfigError(f"lora_dropout must be in [0, 1), got {self.lora_dropout}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.per_device_batch < 1:
            raise ConfigError(f"per_device_batch must be >= 1, got {self.per_device_batch}")
        if self.grad_accum < 1:
            raise ConfigError(f"grad_accum must be >= 1, got {self.grad_accum}")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.scheduler not in ("cosine", "linear", "constant"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.max_grad_norm <= 0:
            raise ConfigError(f"max_grad_norm must be > 0, got {self.max_grad_norm}")


PRESETS: dict[str, TrainConfig] = {
    "default": TrainConfig(),
    "alternate": TrainConfig(lr=1e-5, seed=40, lora_dropout=0.2),
}


def preset(name: str, **overrides: object) -> TrainConfig:
    """Look up a preset by name, applying field overrides on top."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[name]
    return replace(base, **overrides) if overrides else base
