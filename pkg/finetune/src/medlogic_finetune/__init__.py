"""Two-stage LoRA fine-tuning harness over prompt-record JSONL files."""

from .config import PRESETS, ConfigError, TrainConfig, preset
from .data import (
    IGNORE_INDEX,
    DataError,
    EncodedExample,
    FtRecord,
    SequenceTooLong,
    collate,
    encode_record,
    encode_records,
    load_records,
)
from .lora import LoRAConv1D, LoRALinear, count_parameters, inject_lora, trainable_parameters
from .model import PRESETS as MODEL_PRESETS
from .model import UnknownModel, build_model, hash_parameters
from .tokenizer import WordTokenizer
from .trainer import (
    EmptyDataset,
    MixedStages,
    OutOfMemory,
    TrainRun,
    evaluate_loss,
    load_checkpoint,
    train_stage,
    two_stage,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EmptyDataset",
    "EncodedExample",
    "FtRecord",
    "IGNORE_INDEX",
    "LoRAConv1D",
    "LoRALinear",
    "MODEL_PRESETS",
    "MixedStages",
    "OutOfMemory",
    "PRESETS",
    "SequenceTooLong",
    "TrainConfig",
    "TrainRun",
    "UnknownModel",
    "WordTokenizer",
    "build_model",
    "collate",
    "count_parameters",
    "encode_record",
    "encode_records",
    "evaluate_loss",
    "hash_parameters",
    "inject_lora",
    "load_checkpoint",
    "load_records",
    "preset",
    "trainable_parameters",
    "train_stage",
    "two_stage",
]
