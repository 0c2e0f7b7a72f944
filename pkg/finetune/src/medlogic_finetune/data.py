"""Prompt-record loading and loss-masked encoding.

Records arrive as JSONL with keys id/stage/input/output, one object per
line, exactly as the upstream data pipeline writes them. The encoding
contract: label positions covering the input portion (and the leading BOS)
carry IGNORE_INDEX so only output tokens contribute to the loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .tokenizer import WordTokenizer

__all__ = [
    "IGNORE_INDEX",
    "FtRecord",
    "EncodedExample",
    "DataError",
    "SequenceTooLong",
    "load_records",
    "encode_record",
    "encode_records",
    "collate",
]

IGNORE_INDEX = -100

_KEYS = ("id", "stage", "input", "output")


class DataError(ValueError):
    """A record file or record is structurally unusable."""


class SequenceTooLong(DataError):
    """An output alone exceeds the model context; no valid encoding exists."""


@dataclass(frozen=True, slots=True)
class FtRecord:
    id: str
    stage: str
    input_text: str
    output_text: str


@dataclass(frozen=True, slots=True)
class EncodedExample:
    """Token ids and aligned labels; labels mask the input portion."""

    input_ids: tuple[int, ...]
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.input_ids) != len(self.labels):
            raise ValueError("input_ids and labels must align")

    @property
    def n_output_tokens(self) -> int:
        return sum(1 for l in self.labels if l != IGNORE_INDEX)


def load_records(path: Path | str) -> tuple[FtRecord, ...]:
    """Read one JSON object per line; every key required, all strings."""
    path = Path(path)
    records: list[FtRecord] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        if not isinstance(obj, dict) or set(obj) != set(_KEYS):
            raise DataError(f"{path}:{lineno}: expected keys {list(_KEYS)}")
        if not all(isinstance(obj[k], str) for k in _KEYS):
            raise DataError(f"{path}:{lineno}: all fields must be strings")
        if not obj["output"].split():
            raise DataError(
                f"{path}:{lineno}: record {obj['id']!r} has an empty output; "
                "nothing would contribute to the loss"
            )
        records.append(
            FtRecord(
                id=obj["id"],
                stage=obj["stage"],
                input_text=obj["input"],
                output_text=obj["output"],
            )
        )
    return tuple(records)


def encode_record(
    record: FtRecord, tokenizer: WordTokenizer, max_len: int
) -> EncodedExample:
    """BOS + input + output + EOS, labels masked over BOS and input.

    When the sequence exceeds max_len the input is truncated from the
    left, keeping the tokens nearest the output. The output itself is
    never cut; an output that cannot fit at all is an error.
    """
    out_ids = tokenizer.encode(record.output_text) + [tokenizer.eos_id]
    if len(out_ids) + 1 > max_len:
        raise SequenceTooLong(
            f"record {record.id!r}: output needs {len(out_ids)} tokens but the "
            f"model context is {max_len}"
        )
    in_ids = [tokenizer.bos_id] + tokenizer.encode(record.input_text)
    overflow = len(in_ids) + len(out_ids) - max_len
    if overflow > 0:
        in_ids = [tokenizer.bos_id] + in_ids[1 + overflow :]
    ids = in_ids + out_ids
    labels = [IGNORE_INDEX] * len(in_ids) + out_ids
    return EncodedExample(input_ids=tuple(ids), labels=tuple(labels))


def encode_records(
    records: Sequence[FtRecord], tokenizer: WordTokenizer, max_len: int
) -> tuple[EncodedExample, ...]:
    return tuple(encode_record(r, tokenizer, max_len) for r in records)


def collate(
    examples: Sequence[EncodedExample], pad_id: int
) -> dict[str, torch.Tensor]:
    """Right-pad a batch; padding gets attention 0 and IGNORE_INDEX labels."""
    if not examples:
        raise ValueError("cannot collate an empty batch")
    width = max(len(e.input_ids) for e in examples)
    ids = torch.full((len(examples), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(examples), width), dtype=torch.long)
    labels = torch.full((len(examples), width), IGNORE_INDEX, dtype=torch.long)
    for i, e in enumerate(examples):
        n = len(e.input_ids)
        ids[i, :n] = torch.tensor(e.input_ids, dtype=torch.long)
        mask[i, :n] = 1
        labels[i, :n] = torch.tensor(e.labels, dtype=torch.long)
    return {"input_ids": ids, "attention_mask": mask, "labels": labels}
