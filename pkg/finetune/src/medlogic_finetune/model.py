"""Tiny causal LMs built locally from an architecture preset.

Nothing is downloaded. base_model_id names a preset; the weights are
randomly initialized under the run seed, so two builds with the same
preset, vocabulary size and seed are parameter-identical.
"""

from __future__ import annotations

import hashlib

import torch
from transformers import GPT2Config, GPT2LMHeadModel

from .tokenizer import WordTokenizer

__all__ = ["PRESETS", "UnknownModel", "build_model", "hash_parameters"]

PRESETS: dict[str, dict[str, int]] = {
    "tiny-gpt2": {"n_layer": 2, "n_head": 2, "n_embd": 64, "n_positions": 256},
    "small-gpt2": {"n_layer": 4, "n_head": 4, "n_embd": 128, "n_positions": 512},
}


class UnknownModel(ValueError):
    """base_model_id does not name a known architecture preset."""


def build_model(
    base_model_id: str, tokenizer: WordTokenizer, seed: int
) -> GPT2LMHeadModel:
    """Deterministically random-initialize the preset architecture."""
    if base_model_id not in PRESETS:
        raise UnknownModel(
            f"unknown base_model_id {base_model_id!r}; presets: {sorted(PRESETS)}"
        )
    arch = PRESETS[base_model_id]
    config = GPT2Config(
        vocab_size=tokenizer.vocab_size,
        bos_token_id=tokenizer.bos_id,
        eos_token_id=tokenizer.eos_id,
        pad_token_id=tokenizer.pad_id,
        # The base stays noise-free; regularization comes from LoRA dropout.
        embd_pdrop=0.0,
        attn_pdrop=0.0,
        resid_pdrop=0.0,
        loss_type="ForCausalLM",
        **arch,
    )
    torch.manual_seed(seed)
    return GPT2LMHeadModel(config)


def hash_parameters(model: torch.nn.Module) -> str:
    """sha256 over every state tensor, keyed and ordered by name.

    Dtype and shape are hashed along with the bytes so reshaped or recast
    parameters never collide.
    """
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(str(tensor.dtype).encode("utf-8"))
        digest.update(str(tuple(tensor.shape)).encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
