import dataclasses

import pytest

from medlogic_finetune import ConfigError, PRESETS, TrainConfig, preset


def test_default_recipe_values():
    cfg = TrainConfig()
    assert cfg.base_model_id == "tiny-gpt2"
    assert cfg.lora_r == 64
    assert cfg.lora_alpha == 16.0
    assert cfg.lora_dropout == 0.1
    assert cfg.lr == 2e-4
    assert cfg.epochs == 15
    assert cfg.per_device_batch == 8
    assert cfg.grad_accum == 2
    assert cfg.warmup_ratio == 0.03
    assert cfg.weight_decay == 0.001
    assert cfg.scheduler == "cosine"
    assert cfg.seed == 42
    assert cfg.max_grad_norm == 0.3
    assert cfg.load_in_4bit is False


def test_alternate_preset_differs_only_where_stated():
    alt = PRESETS["alternate"]
    assert alt.lr == 1e-5
    assert alt.seed == 40
    assert alt.lora_dropout == 0.2
    default = PRESETS["default"]
    changed = {
        f.name
        for f in dataclasses.fields(TrainConfig)
        if getattr(alt, f.name) != getattr(default, f.name)
    }
    assert changed == {"lr", "seed", "lora_dropout"}


def test_every_field_is_overridable():
    for field in dataclasses.fields(TrainConfig):
        current = getattr(TrainConfig(), field.name)
        if isinstance(current, bool):
            new = not current
        elif isinstance(current, int):
            new = current + 1
        elif isinstance(current, float):
            new = current / 2
        else:
            new = {"base_model_id": "small-gpt2", "scheduler": "linear"}[field.name]
        cfg = dataclasses.replace(TrainConfig(), **{field.name: new})
        assert getattr(cfg, field.name) == new


def test_preset_lookup_and_overrides():
    cfg = preset("default", epochs=3, lr=1e-3)
    assert cfg.epochs == 3 and cfg.lr == 1e-3
    assert preset("alternate") is PRESETS["alternate"]
    with pytest.raises(ConfigError, match="unknown preset"):
        preset("fast")


@pytest.mark.parametrize(
    "field, value, fragment",
    [
        ("lora_r", 0, "lora_r"),
        ("lora_alpha", 0.0, "lora_alpha"),
        ("lora_dropout", 1.0, "lora_dropout"),
        ("lr", -1e-4, "lr"),
        ("epochs", 0, "epochs"),
        ("per_device_batch", 0, "per_device_batch"),
        ("grad_accum", 0, "grad_accum"),
        ("warmup_ratio", 1.0, "warmup_ratio"),
        ("weight_decay", -0.1, "weight_decay"),
        ("scheduler", "cyclic", "scheduler"),
        ("max_grad_norm", 0.0, "max_grad_norm"),
        ("base_model_id", "", "base_model_id"),
    ],
)
def test_rejects_out_of_range_fields(field, value, fragment):
    with pytest.raises(ConfigError, match=fragment):
        dataclasses.replace(TrainConfig(), **{field: value})
