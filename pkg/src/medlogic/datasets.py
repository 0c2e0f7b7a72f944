"""Corpus loading, split assignment, and fine-tuning record construction.

Two record stages share one prompt layout. The understanding stage sees the
question, context, gold answer, and the rule text, and must emit the per-rule
triple groups. The answering stage sees everything except the answer and must
emit the answer verbatim. An answer never appears inside an answering-stage
input; the emitter enforces that, not just the data.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .engine import LogicInjectedGraph
from .kg import EmptyConcept, RelationKind, Triple, normalize_concept
from .rules import RULE_DISPLAY_NAMES, Rule, builtin_rules, render_rule

__all__ = [
    "ParseError",
    "MissingField",
    "DuplicateId",
    "QaSample",
    "PromptRecord",
    "LuParse",
    "NO_TRIPLES",
    "load_bioasq",
    "load_mashqa",
    "assign_splits",
    "render_rules_block",
    "build_lu_input",
    "build_aqa_input",
    "emit_lu_record",
    "emit_aqa_record",
    "render_lu_output",
    "parse_lu_output",
    "write_records_jsonl",
    "read_records_jsonl",
    "write_id_text_jsonl",
    "read_id_text_jsonl",
]

logger = logging.getLogger(__name__)

NO_TRIPLES = "NO_TRIPLES"


class ParseError(ValueError):
    """Structurally broken corpus file (bad JSON, wrong top-level shape)."""


class MissingField(ValueError):
    """A sample lacks a required field."""

    def __init__(self, message: str, field: str = "", sample_id: str = "") -> None:
        super().__init__(message)
        self.field = field
        self.sample_id = sample_id


class DuplicateId(ValueError):
    """Two samples share an id."""

    def __init__(self, ids: Sequence[str]) -> None:
        self.ids = tuple(sorted(set(ids)))
        super().__init__(f"duplicate sample ids: {', '.join(self.ids)}")


@dataclass(frozen=True, slots=True)
class QaSample:
    """One QA item. alternates holds any additional reference answers."""

    id: str
    question: str
    context: str
    answer: str
    split: str = "train"
    alternates: tuple[str, ...] = ()


@dataclass(frozen=True, slots=True)
class PromptRecord:
    """One fine-tuning example for either stage."""

    stage: str  # "LU" | "AQA"
    input_text: str
    output_text: str
    sample_id: str


# ---------------------------------------------------------------------------
# Corpus loaders
# ---------------------------------------------------------------------------


def _first_and_rest(value: object, where: str, field: str, sample_id: str) -> tuple[str, tuple[str, ...]]:
    if isinstance(value, str):
        candidates = [value]
    elif isinstance(value, list) and all(isinstance(v, str) for v in value):
        candidates = list(value)
    else:
        raise MissingField(
            f"{where}: field {field!r} must be a string or list of strings",
            field=field, sample_id=sample_id,
        )
    cleaned = [c.strip() for c in candidates if c.strip()]
    if not cleaned:
        raise MissingField(
            f"{where}: field {field!r} is empty", field=field, sample_id=sample_id
        )
    return cleaned[0], tuple(cleaned[1:])


def load_bioasq(path: Path | str) -> tuple[QaSample, ...]:
    """Load a BioASQ-style file: {"questions": [{id, body, snippets, ideal_answer}]}.

    Snippet texts join with single spaces in file order. The first
    non-empty ideal answer becomes the reference; the rest ride along as
    alternates. Every sample starts in the train split.
    """
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict) or not isinstance(data.get("questions"), list):
        raise ParseError(f"{path}: expected a top-level 'questions' array")

    samples: list[QaSample] = []
    seen: dict[str, int] = {}
    for idx, item in enumerate(data["questions"]):
        where = f"{path}: questions[{idx}]"
        if not isinstance(item, dict):
            raise ParseError(f"{where}: expected an object")
        sample_id = item.get("id")
        if not isinstance(sample_id, str) or not sample_id.strip():
            raise MissingField(f"{where}: missing 'id'", field="id")
        sample_id = sample_id.strip()
        question = item.get("body")
        if not isinstance(question, str) or not question.strip():
            raise MissingField(
                f"{where} (id {sample_id!r}): missing 'body'",
                field="body", sample_id=sample_id,
            )
        snippets = item.get("snippets")
        if not isinstance(snippets, list):
            raise MissingField(
                f"{where} (id {sample_id!r}): missing 'snippets'",
                field="snippets", sample_id=sample_id,
            )
        texts: list[str] = []
        for s_idx, snip in enumerate(snippets):
            if not isinstance(snip, dict) or not isinstance(snip.get("text"), str):
                raise MissingField(
                    f"{where} (id {sample_id!r}): snippets[{s_idx}] has no 'text'",
                    field="snippets", sample_id=sample_id,
                )
            if snip["text"].strip():
                texts.append(snip["text"].strip())
        if "ideal_answer" not in item:
            raise MissingField(
                f"{where} (id {sample_id!r}): missing 'ideal_answer'",
                field="ideal_answer", sample_id=sample_id,
            )
        answer, alternates = _first_and_rest(
            item["ideal_answer"], f"{where} (id {sample_id!r})",
            "ideal_answer", sample_id,
        )
        seen[sample_id] = seen.get(sample_id, 0) + 1
        samples.append(
            QaSample(
                id=sample_id,
                question=question.strip(),
                context=" ".join(texts),
                answer=answer,
                alternates=alternates,
            )
        )
    duplicates = [i for i, n in seen.items() if n > 1]
    if duplicates:
        raise DuplicateId(duplicates)
    return tuple(samples)


def load_mashqa(path: Path | str) -> tuple[QaSample, ...]:
    """Load a MashQA-style file: {"data": [{"paragraphs": [{context, qas}]}]}."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict) or not isinstance(data.get("data"), list):
        raise ParseError(f"{path}: expected a top-level 'data' array")

    samples: list[QaSample] = []
    seen: dict[str, int] = {}
    for d_idx, doc in enumerate(data["data"]):
        if not isinstance(doc, dict) or not isinstance(doc.get("paragraphs"), list):
            raise ParseError(f"{path}: data[{d_idx}]: expected a 'paragraphs' array")
        for p_idx, para in enumerate(doc["paragraphs"]):
            where = f"{path}: data[{d_idx}].paragraphs[{p_idx}]"
            if not isinstance(para, dict) or not isinstance(para.get("context"), str):
                raise MissingField(f"{where}: missing 'context'", field="context")
            context = para["context"].strip()
            qas = para.get("qas")
            if not isinstance(qas, list):
                raise MissingField(f"{where}: missing 'qas'", field="qas")
            for q_idx, qa in enumerate(qas):
                q_where = f"{where}.qas[{q_idx}]"
                if not isinstance(qa, dict):
                    raise ParseError(f"{q_where}: expected an object")
                sample_id = qa.get("id")
                if not isinstance(sample_id, str) or not sample_id.strip():
                    raise MissingField(f"{q_where}: missing 'id'", field="id")
                sample_id = sample_id.strip()
                question = qa.get("question")
                if not isinstance(question, str) or not question.strip():
                    raise MissingField(
                        f"{q_where} (id {sample_id!r}): missing 'question'",
                        field="question", sample_id=sample_id,
                    )
                answers = qa.get("answers")
                if not isinstance(answers, list) or not answers:
                    raise MissingField(
                        f"{q_where} (id {sample_id!r}): missing 'answers'",
                        field="answers", sample_id=sample_id,
                    )
                texts = []
                for a_idx, ans in enumerate(answers):
                    if not isinstance(ans, dict) or not isinstance(ans.get("text"), str):
                        raise MissingField(
                            f"{q_where} (id {sample_id!r}): answers[{a_idx}] has no 'text'",
                            field="answers", sample_id=sample_id,
                        )
                    texts.append(ans["text"])
                answer, alternates = _first_and_rest(
                    texts, f"{q_where} (id {sample_id!r})", "answers", sample_id
                )
                seen[sample_id] = seen.get(sample_id, 0) + 1
                samples.append(
                    QaSample(
                        id=sample_id, question=question.strip(),
                        context=context, answer=answer, alternates=alternates,
                    )
                )
    duplicates = [i for i, n in seen.items() if n > 1]
    if duplicates:
        raise DuplicateId(duplicates)
    return tuple(samples)


def assign_splits(
    samples: Sequence[QaSample], seed: int, train_fraction: float = 0.8
) -> tuple[QaSample, ...]:
    """Deterministic seeded split. Samples come back sorted by id.

    Ids are sorted before shuffling, so the assignment depends only on the
    id set and the seed, never on input order.
    """
    ids = sorted(s.id for s in samples)
    rng = random.Random(seed)
    rng.shuffle(ids)
    n_train = round(len(ids) * train_fraction)
    train_ids = set(ids[:n_train])
    return tuple(
        replace(s, split="train" if s.id in train_ids else "test")
        for s in sorted(samples, key=lambda s: s.id)
    )


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------


def render_rules_block(rules: Iterable[Rule]) -> str:
    return "\n".join(render_rule(r) for r in rules)


def build_lu_input(sample: QaSample, rules_block: str) -> str:
    return (
        f"### Rules:\n{rules_block}\n"
        f"### Context:\n{sample.context}\n"
        f"### Question:\n{sample.question}\n"
        f"### Answer:\n{sample.answer}\n"
        f"### Logic Triples:"
    )


def build_aqa_input(sample: QaSample, rules_block: str) -> str:
    return (
        f"### Rules:\n{rules_block}\n"
        f"### Context:\n{sample.context}\n"
        f"### Question:\n{sample.question}\n"
        f"### Answer:"
    )


def _strip_answer(text: str, answer: str) -> str:
    # Deleting (not masking) is the only replacement that cannot itself
    # reintroduce the answer as a substring.
    while answer and answer in text:
        text = text.replace(answer, "")
    return text


def emit_lu_record(sample: QaSample, lig: LogicInjectedGraph, rules_block: str) -> PromptRecord:
    """Understanding-stage record: prompt with gold answer, per-rule triples out."""
    return PromptRecord(
        stage="LU",
        input_text=build_lu_input(sample, rules_block),
        output_text=render_lu_output(lig.conclusions_by_rule()),
        sample_id=sample.id,
    )


def emit_aqa_record(sample: QaSample, rules_block: str) -> PromptRecord:
    """Answering-stage record. The output is the answer verbatim, and the
    input is scrubbed of any verbatim answer occurrence before it leaves."""
    input_text = build_aqa_input(sample, rules_block)
    if sample.answer and sample.answer in input_text:
        logger.warning(
            "sample %s: answer text occurs in its own prompt; deleting occurrences",
            sample.id,
        )
        input_text = _strip_answer(input_text, sample.answer)
    return PromptRecord(
        stage="AQA",
        input_text=input_text,
        output_text=sample.answer,
        sample_id=sample.id,
    )


# ---------------------------------------------------------------------------
# Understanding-stage output text
# ---------------------------------------------------------------------------

# Inflected verb forms used when triples are written for the model; the
# lenient parser below accepts these, the canonical names, and common
# hyphen/space variants.
_DISPLAY_RELATION: dict[RelationKind, str] = {
    RelationKind.CO_OCCURS_WITH: "co_occurs_with",
    RelationKind.PREVENT: "prevents",
    RelationKind.TREAT: "treats",
    RelationKind.DIAGNOSIS: "diagnoses",
    RelationKind.INTERACTS_WITH: "interacts_with",
    RelationKind.AFFECTS: "affects",
    RelationKind.CAUSES: "causes",
    RelationKind.IS_A: "is_a",
}

_PARSE_RELATION: dict[str, RelationKind] = {
    **{kind.value: kind for kind in RelationKind},
    **{display: kind for kind, display in _DISPLAY_RELATION.items()},
    "prevent": RelationKind.PREVENT,
    "treat": RelationKind.TREAT,
    "diagnosis": RelationKind.DIAGNOSIS,
    "cause": RelationKind.CAUSES,
    "affect": RelationKind.AFFECTS,
}

_DISPLAY_TO_RULE = {display.lower(): name for name, display in RULE_DISPLAY_NAMES.items()}

_GROUP_RE = re.compile(r"Rule of\s+([^:\[\]]+?)\s*:\s*\[([^\[\]]*)\]")
_TUPLE_RE = re.compile(r"\(([^()]*)\)")


def _display_concept(concept: str) -> str:
    return concept.replace("_", " ")


def render_lu_output(by_rule: Mapping[str, Iterable[Triple]]) -> str:
    """Serialize per-rule conclusions in built-in rule order.

    Rules without conclusions are omitted; when nothing fired at all the
    output is the NO_TRIPLES sentinel.
    """
    known = {rule.name for rule in builtin_rules()}
    stray = set(by_rule) - known
    if stray:
        raise ValueError(f"unknown rule names: {sorted(stray)}")
    lines: list[str] = []
    for rule in builtin_rules():
        triples = sorted(set(by_rule.get(rule.name, ())), key=Triple.sort_key)
        if not triples:
            continue
        rendered = ", ".join(
            f"({_display_concept(t.head)}, {_DISPLAY_RELATION[t.relation]}, "
            f"{_display_concept(t.tail)})"
            for t in triples
        )
        lines.append(f"Rule of {RULE_DISPLAY_NAMES[rule.name]}: [{rendered}]")
    return "\n".join(lines) if lines else NO_TRIPLES


@dataclass(frozen=True, slots=True)
class LuParse:
    """Best-effort parse of understanding-stage model output."""

    by_rule: dict[str, tuple[Triple, ...]]
    rejects: tuple[str, ...]


def _parse_relation_text(text: str) -> RelationKind | None:
    key = re.sub(r"[\s\-]+", "_", text.strip().lower())
    return _PARSE_RELATION.get(key)


def parse_lu_output(text: str) -> LuParse:
    """Parse model-emitted triple groups. Never raises.

    Anything unintelligible lands in rejects: malformed lines, unknown rule
    titles, tuples with the wrong arity or an unknown relation.
    """
    by_rule: dict[str, set[Triple]] = {}
    rejects: list[str] = []

    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line or line == NO_TRIPLES:
            continue
        matches = list(_GROUP_RE.finditer(line))
        if not matches:
            rejects.append(line)
            continue
        # Text between groups should be pure separators; keep anything else.
        cursor = 0
        leftover_parts: list[str] = []
        for m in matches:
            leftover_parts.append(line[cursor : m.start()])
            cursor = m.end()
        leftover_parts.append(line[cursor:])
        leftover = "".join(leftover_parts).strip(" \t,;.")
        if leftover:
            rejects.append(leftover)

        for m in matches:
            title, body = m.group(1), m.group(2)
            rule_name = _DISPLAY_TO_RULE.get(title.strip().lower())
            if rule_name is None:
                rejects.append(m.group(0))
                continue
            bucket = by_rule.setdefault(rule_name, set())
            for t_match in _TUPLE_RE.finditer(body):
                parts = [p.strip() for p in t_match.group(1).split(",")]
                if len(parts) != 3:
                    rejects.append(t_match.group(0))
                    continue
                relation = _parse_relation_text(parts[1])
                if relation is None:
                    rejects.append(t_match.group(0))
                    continue
                try:
                    head = normalize_concept(parts[0])
                    tail = normalize_concept(parts[2])
                except EmptyConcept:
                    rejects.append(t_match.group(0))
                    continue
                bucket.add(Triple(head, relation, tail))

    cleaned = {
        name: tuple(sorted(triples, key=Triple.sort_key))
        for name, triples in by_rule.items()
        if triples
    }
    return LuParse(by_rule=cleaned, rejects=tuple(rejects))


# ---------------------------------------------------------------------------
# JSONL forms
# ---------------------------------------------------------------------------


def write_records_jsonl(records: Iterable[PromptRecord], path: Path | str) -> None:
    """One record per line with keys id, stage, input, output (that order)."""
    lines = []
    for rec in records:
        lines.append(
            json.dumps(
                {
                    "id": rec.sample_id,
                    "stage": rec.stage,
                    "input": rec.input_text,
                    "output": rec.output_text,
                },
                ensure_ascii=False,
            )
        )
    body = "\n".join(lines)
    if body:
        body += "\n"
    Path(path).write_text(body, encoding="utf-8", newline="\n")


def read_records_jsonl(path: Path | str) -> tuple[PromptRecord, ...]:
    records: list[PromptRecord] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        for key in ("id", "stage", "input", "output"):
            if key not in obj:
                raise MissingField(f"{path}:{lineno}: missing key {key!r}", field=key)
        records.append(
            PromptRecord(
                stage=str(obj["stage"]),
                input_text=str(obj["input"]),
                output_text=str(obj["output"]),
                sample_id=str(obj["id"]),
            )
        )
    return tuple(records)


def write_id_text_jsonl(rows: Iterable[tuple[str, str]], path: Path | str) -> None:
    lines = [
        json.dumps({"id": rid, "text": text}, ensure_ascii=False) for rid, text in rows
    ]
    body = "\n".join(lines)
    if body:
        body += "\n"
    Path(path).write_text(body, encoding="utf-8", newline="\n")


def read_id_text_jsonl(path: Path | str) -> tuple[tuple[str, str], ...]:
    rows: list[tuple[str, str]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        if "id" not in obj or "text" not in obj:
            raise MissingField(f"{path}:{lineno}: expected keys 'id' and 'text'")
        rows.append((str(obj["id"]), str(obj["text"])))
    return tuple(rows)
