"""Two-stage LoRA training.

Stage 1 trains adapters on logic-understanding records; stage 2 continues
from the stage-1 checkpoint on answer-generation records. Each stage uses
a fresh optimizer and scheduler. Checkpoints are self-describing: the
stage directory holds the weights, the architecture description, the
vocabulary, a loss curve CSV and a manifest with parameter hashes, so a
run can be audited or resumed without the original process.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn
from transformers import get_scheduler

from .config import TrainConfig
from .data import (
    IGNORE_INDEX,
    EncodedExample,
    FtRecord,
    collate,
    encode_records,
)
from .lora import DEFAULT_TARGETS, inject_lora, trainable_parameters
from .model import build_model, hash_parameters
from .tokenizer import WordTokenizer

__all__ = [
    "EmptyDataset",
    "MixedStages",
    "OutOfMemory",
    "TrainRun",
    "evaluate_loss",
    "train_stage",
    "two_stage",
    "load_checkpoint",
]

HARNESS = "medlogic-finetune 0.1.0"


class EmptyDataset(ValueError):
    """A stage received no records."""


class MixedStages(ValueError):
    """One training call received records from more than one stage."""


class OutOfMemory(RuntimeError):
    """A training step exhausted memory; the message says what to shrink."""


@dataclass(frozen=True, slots=True)
class TrainRun:
    """Result of one stage: what was trained, how the loss moved, where."""

    stage: str
    records: tuple[FtRecord, ...]
    loss_curve: tuple[float, ...]
    checkpoint_ref: Path
    initial_loss: float
    final_loss: float
    steps_per_epoch: int

    def __post_init__(self) -> None:
        bad = [x for x in self.loss_curve if not math.isfinite(x)]
        if bad or not math.isfinite(self.initial_loss) or not math.isfinite(self.final_loss):
            raise ValueError(f"non-finite loss values in stage {self.stage}")


def _pick_device(device: str | None) -> torch.device:
    if device is not None:
        return torch.device(device)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def _shifted_ce_sum(
    model: nn.Module, batch: dict[str, torch.Tensor], device: torch.device
) -> tuple[torch.Tensor, int]:
    """(summed cross-entropy over output tokens, number of output tokens)."""
    input_ids = batch["input_ids"].to(device)
    attention_mask = batch["attention_mask"].to(device)
    labels = batch["labels"].to(device)
    logits = model(input_ids=input_ids, attention_mask=attention_mask).logits
    shift_logits = logits[:, :-1, :]
    shift_labels = labels[:, 1:]
    ce = F.cross_entropy(
        shift_logits.reshape(-1, shift_logits.size(-1)),
        shift_labels.reshape(-1),
        ignore_index=IGNORE_INDEX,
        reduction="sum",
    )
    n_targets = int((shift_labels != IGNORE_INDEX).sum())
    return ce, n_targets


def evaluate_loss(
    model: nn.Module,
    examples: Sequence[EncodedExample],
    pad_id: int,
    batch_size: int = 8,
    device: str | None = None,
) -> float:
    """Token-mean cross-entropy over output tokens of the whole set."""
    if not examples:
        raise EmptyDataset("cannot evaluate an empty example list")
    dev = _pick_device(device)
    model.to(dev)
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            batch = collate(examples[start : start + batch_size], pad_id)
            ce, n = _shifted_ce_sum(model, batch, dev)
            total += float(ce)
            count += n
    if was_training:
        model.train()
    if count == 0:
        raise EmptyDataset("no output tokens to evaluate")
    return total / count


def _single_stage(records: Sequence[FtRecord]) -> str:
    stages = sorted({r.stage for r in records})
    if len(stages) != 1:
        raise MixedStages(f"records span stages {stages}; train one stage at a time")
    return stages[0]


def _write_loss_csv(path: Path, rows: Sequence[tuple[str, int, int, float, float]]) -> None:
    lines = ["stage,step,epoch,lr,loss"]
    for stage, step, epoch, lr, loss in rows:
        lines.append(f"{stage},{step},{epoch},{lr!r},{loss!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _stage_rows(run: TrainRun, lr_curve: Sequence[float]) -> list[tuple[str, int, int, float, float]]:
    rows = []
    for i, (loss, lr) in enumerate(zip(run.loss_curve, lr_curve)):
        rows.append((run.stage, i + 1, i // run.steps_per_epoch + 1, lr, loss))
    return rows


def train_stage(
    records: Sequence[FtRecord],
    config: TrainConfig,
    out_dir: Path | str,
    tokenizer: WordTokenizer | None = None,
    init_checkpoint: Path | str | None = None,
    device: str | None = None,
) -> TrainRun:
    """Train adapters on one stage's records and write a checkpoint.

    With init_checkpoint the model (architecture, vocabulary, weights) is
    loaded from that directory; otherwise a fresh base is built from the
    config and the tokenizer (built from the records when not supplied).
    The optimizer and scheduler are always fresh.
    """
    records = tuple(records)
    if not records:
        raise EmptyDataset("train_stage received no records")
    stage = _single_stage(records)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dev = _pick_device(device)

    if init_checkpoint is not None:
        model, ckpt_tokenizer, arch = load_checkpoint(init_checkpoint)
        if tokenizer is not None and tokenizer != ckpt_tokenizer:
            raise ValueError("supplied tokenizer disagrees with the checkpoint's")
        tokenizer = ckpt_tokenizer
        # Same-shape fresh base under the same seed, for the base hash.
        reference = build_model(arch["base_model_id"], tokenizer, config.seed)
        inject_lora(
            reference,
            r=arch["lora"]["r"],
            alpha=arch["lora"]["alpha"],
            dropout=arch["lora"]["dropout"],
            targets=tuple(arch["lora"]["targets"]),
        )
        base_hash = hash_parameters(reference)
        del reference
        base_model_id = str(arch["base_model_id"])
    else:
        if tokenizer is None:
            tokenizer = WordTokenizer.build(
                [r.input_text for r in records] + [r.output_text for r in records]
            )
        base_model_id = config.base_model_id
        model = build_model(base_model_id, tokenizer, config.seed)
        inject_lora(
            model,
            r=config.lora_r,
            alpha=config.lora_alpha,
            dropout=config.lora_dropout,
            targets=DEFAULT_TARGETS,
        )
        base_hash = hash_parameters(model)
    init_hash = hash_parameters(model)
    model.to(dev)

    max_len = int(model.config.n_positions)
    examples = encode_records(records, tokenizer, max_len)
    initial_loss = evaluate_loss(model, examples, tokenizer.pad_id, config.per_device_batch, device=str(dev))

    n_micro = math.ceil(len(examples) / config.per_device_batch)
    steps_per_epoch = math.ceil(n_micro / config.grad_accum)
    total_steps = config.epochs * steps_per_epoch
    params = trainable_parameters(model)
    optimizer = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    scheduler = get_scheduler(
        config.scheduler,
        optimizer,
        num_warmup_steps=int(round(config.warmup_ratio * total_steps)),
        num_training_steps=total_steps,
    )

    shuffle_rng = random.Random(config.seed)
    torch.manual_seed(config.seed)  # adapter dropout stream
    loss_curve: list[float] = []
    lr_curve: list[float] = []
    model.train()
    try:
        for _epoch in range(config.epochs):
            order = list(range(len(examples)))
            shuffle_rng.shuffle(order)
            micro_batches = [
                order[i : i + config.per_device_batch]
                for i in range(0, len(order), config.per_device_batch)
            ]
            for g in range(0, len(micro_batches), config.grad_accum):
                group = micro_batches[g : g + config.grad_accum]
                optimizer.zero_grad()
                ce_total, token_total = 0.0, 0
                for idxs in group:
                    batch = collate([examples[i] for i in idxs], tokenizer.pad_id)
                    ce, n = _shifted_ce_sum(model, batch, dev)
                    (ce / n / len(group)).backward()
                    ce_total += float(ce.detach())
                    token_total += n
                nn.utils.clip_grad_norm_(params, config.max_grad_norm)
                lr_curve.append(float(scheduler.get_last_lr()[0]))
                optimizer.step()
                scheduler.step()
                loss_curve.append(ce_total / token_total)
    except (RuntimeError, torch.OutOfMemoryError) as exc:
        if "out of memory" in str(exc).lower():
            raise OutOfMemory(
                "training step ran out of memory; reduce per_device_batch "
                f"(currently {config.per_device_batch}) or pick a smaller "
                "base_model_id preset"
            ) from exc
        raise
    model.eval()

    final_loss = evaluate_loss(model, examples, tokenizer.pad_id, config.per_device_batch, device=str(dev))
    trained_hash = hash_parameters(model)

    run = TrainRun(
        stage=stage,
        records=records,
        loss_curve=tuple(loss_curve),
        checkpoint_ref=out_dir,
        initial_loss=initial_loss,
        final_loss=final_loss,
        steps_per_epoch=steps_per_epoch,
    )

    torch.save(model.state_dict(), out_dir / "checkpoint.pt")
    tokenizer.save(out_dir / "vocab.json")
    arch_out = {
        "base_model_id": base_model_id,
        "vocab_size": tokenizer.vocab_size,
        "lora": {
            "r": config.lora_r,
            "alpha": config.lora_alpha,
            "dropout": config.lora_dropout,
            "targets": list(DEFAULT_TARGETS),
        },
    }
    if init_checkpoint is not None:
        arch_out["lora"] = dict(arch["lora"])
    (out_dir / "arch.json").write_text(
        json.dumps(arch_out, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_loss_csv(out_dir / "loss_curve.csv", _stage_rows(run, lr_curve))
    manifest = {
        "harness": HARNESS,
        "stage": stage,
        "n_records": len(records),
        "config": asdict(config),
        "init_checkpoint": str(Path(init_checkpoint)) if init_checkpoint is not None else None,
        "base_hash": base_hash,
        "init_hash": init_hash,
        "trained_hash": trained_hash,
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "steps_per_epoch": steps_per_epoch,
        "total_steps": total_steps,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return run


def load_checkpoint(
    ckpt_dir: Path | str,
) -> tuple[nn.Module, WordTokenizer, dict]:
    """Rebuild the adapted model a stage directory describes."""
    ckpt_dir = Path(ckpt_dir)
    arch = json.loads((ckpt_dir / "arch.json").read_text(encoding="utf-8"))
    tokenizer = WordTokenizer.load(ckpt_dir / "vocab.json")
    if tokenizer.vocab_size != arch["vocab_size"]:
        raise ValueError(
            f"{ckpt_dir}: vocabulary size {tokenizer.vocab_size} does not match "
            f"architecture {arch['vocab_size']}"
        )
    model = build_model(arch["base_model_id"], tokenizer, seed=0)
    inject_lora(
        model,
        r=arch["lora"]["r"],
        alpha=arch["lora"]["alpha"],
        dropout=arch["lora"]["dropout"],
        targets=tuple(arch["lora"]["targets"]),
    )
    state = torch.load(ckpt_dir / "checkpoint.pt", map_location="cpu", weights_only=True)
    model.load_state_dict(state, strict=True)
    model.eval()
    return model, tokenizer, arch


def two_stage(
    lu_records: Sequence[FtRecord],
    aqa_records: Sequence[FtRecord],
    config: TrainConfig,
    out_dir: Path | str,
    skip_stage1: bool = False,
    device: str | None = None,
) -> tuple[TrainRun | None, TrainRun]:
    """Run both stages, stage 2 initialized from stage 1's checkpoint.

    skip_stage1 trains stage 2 directly from the random base, giving the
    single-stage baseline. The shared vocabulary always covers both record
    sets so the two stages agree on token ids.
    """
    lu_records = tuple(lu_records)
    aqa_records = tuple(aqa_records)
    if not lu_records:
        raise EmptyDataset("stage-1 record set is empty")
    if not aqa_records:
        raise EmptyDataset("stage-2 record set is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    texts = [r.input_text for r in lu_records + aqa_records]
    texts += [r.output_text for r in lu_records + aqa_records]
    tokenizer = WordTokenizer.build(texts)

    stage1: TrainRun | None = None
    if not skip_stage1:
        stage1 = train_stage(
            lu_records, config, out_dir / "stage1", tokenizer=tokenizer, device=device
        )
    stage2 = train_stage(
        aqa_records,
        config,
        out_dir / "stage2",
        tokenizer=tokenizer,
        init_checkpoint=stage1.checkpoint_ref if stage1 is not None else None,
        device=device,
    )

    combined: list[tuple[str, int, int, float, float]] = []
    for run in (stage1, stage2):
        if run is None:
            continue
        stage_csv = (run.checkpoint_ref / "loss_curve.csv").read_text(encoding="utf-8")
        for line in stage_csv.splitlines()[1:]:
            s, step, epoch, lr, loss = line.split(",")
            combined.append((s, int(step), int(epoch), float(lr), float(loss)))
    _write_loss_csv(out_dir / "loss_curve.csv", combined)

    manifests = {}
    for name, run in (("stage1", stage1), ("stage2", stage2)):
        if run is None:
            continue
        manifests[name] = json.loads(
            (run.checkpoint_ref / "manifest.json").read_text(encoding="utf-8")
        )
    run_manifest = {
        "harness": HARNESS,
        "skip_stage1": skip_stage1,
        "config": asdict(config),
        "stage2_initialized_from": "base" if skip_stage1 else "stage1",
        "stages": manifests,
    }
    (out_dir / "run_manifest.json").write_text(
        json.dumps(run_manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return stage1, stage2
