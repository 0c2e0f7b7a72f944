"""Low-rank adapters injected into an existing model.

Both torch.nn.Linear and the transposed Conv1D projection used by GPT-2
blocks are supported. Adapter B matrices start at zero, so a freshly
injected model computes exactly what the frozen base computes; training
then moves only the adapter parameters.
"""

from __future__ import annotations

import math
from typing import Iterable, Iterator

import torch
from torch import nn
from transformers.pytorch_utils import Conv1D

__all__ = [
    "LoRALinear",
    "LoRAConv1D",
    "inject_lora",
    "trainable_parameters",
    "count_parameters",
]

DEFAULT_TARGETS = ("c_attn", "c_proj", "c_fc")


class LoRALinear(nn.Module):
    """y = base(x) + dropout(x) A^T B^T * (alpha / r)."""

    def __init__(self, base: nn.Linear, r: int, alpha: float, dropout: float) -> None:
        super().__init__()
        self.base = base
        self.lora_a = nn.Parameter(torch.empty(r, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, r))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))
        self.scaling = alpha / r
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        delta = self.dropout(x) @ self.lora_a.T @ self.lora_b.T
        return self.base(x) + delta * self.scaling


class LoRAConv1D(nn.Module):
    """Same adapter for Conv1D, whose weight is stored (in, out)."""

    def __init__(self, base: Conv1D, r: int, alpha: float, dropout: float) -> None:
        super().__init__()
        in_features = base.weight.shape[0]
        out_features = base.weight.shape[1]
        self.base = base
        self.lora_a = nn.Parameter(torch.empty(in_features, r))
        self.lora_b = nn.Parameter(torch.zeros(r, out_features))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))
        self.scaling = alpha / r
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        delta = self.dropout(x) @ self.lora_a @ self.lora_b
        return self.base(x) + delta * self.scaling


def _named_leaf_modules(model: nn.Module) -> Iterator[tuple[str, nn.Module]]:
    for name, module in model.named_modules():
        if name:
            yield name, module


def inject_lora(
    model: nn.Module,
    r: int,
    alpha: float,
    dropout: float,
    targets: Iterable[str] = DEFAULT_TARGETS,
) -> int:
    """Freeze the model, wrap every matching projection, return the count.

    A module matches when the last component of its dotted name equals one
    of targets and it is a Linear or Conv1D. Matching zero modules is an
    error: it means the target list and architecture disagree.
    """
    targets = tuple(targets)
    model.requires_grad_(False)
    to_wrap: list[tuple[str, nn.Module]] = []
    for name, module in _named_leaf_modules(model):
        if name.rsplit(".", 1)[-1] in targets and isinstance(module, (nn.Linear, Conv1D)):
            to_wrap.append((name, module))
    if not to_wrap:
        raise ValueError(f"no modules named {targets} found to adapt")
    for name, module in to_wrap:
        parent_name, _, attr = name.rpartition(".")
        parent = model.get_submodule(parent_name) if parent_name else model
        if isinstance(module, nn.Linear):
            wrapped: nn.Module = LoRALinear(module, r, alpha, dropout)
        else:
            wrapped = LoRAConv1D(module, r, alpha, dropout)
        setattr(parent, attr, wrapped)
    return len(to_wrap)


def trainable_parameters(model: nn.Module) -> list[nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def count_parameters(model: nn.Module) -> tuple[int, int]:
    """(trainable, total) parameter counts."""
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    total = sum(p.numel() for p in model.parameters())
    return trainable, total
