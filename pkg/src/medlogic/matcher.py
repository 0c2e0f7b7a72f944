"""Dictionary-driven concept extraction and per-sample graph construction.

Extraction is a greedy longest-match scan over normalized tokens. No model,
no fuzziness: the lexicon decides everything, which keeps the stage fully
deterministic and auditable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .kg import (
    ConceptId,
    KnowledgeGraph,
    RelationKind,
    Triple,
    build_graph,
    is_canonical_concept,
)

__all__ = [
    "LexiconError",
    "EntityMention",
    "Lexicon",
    "RelationTable",
    "load_lexicon",
    "load_relation_table",
    "extract_entities",
    "filter_rows",
    "build_context_kg",
]

logger = logging.getLogger(__name__)


class LexiconError(ValueError):
    """Bad lexicon or relation-table content."""


@dataclass(frozen=True, slots=True)
class EntityMention:
    """A lexicon hit. start/end are character offsets into the original text,
    end exclusive, spanning the first through last matched token."""

    concept: ConceptId
    surface: str
    start: int
    end: int


class Lexicon:
    """Maps normalized surface-token sequences to concept ids."""

    def __init__(self, entries: Mapping[tuple[str, ...], ConceptId]) -> None:
        self._entries = dict(entries)
        self.max_phrase_len = max((len(k) for k in self._entries), default=0)

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, tokens: tuple[str, ...]) -> ConceptId | None:
        return self._entries.get(tokens)

    def concept_ids(self) -> frozenset[ConceptId]:
        return frozenset(self._entries.values())

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, ConceptId]]) -> "Lexicon":
        """Build from (surface phrase, concept id) pairs.

        Surfaces are normalized into token keys; two surfaces that normalize
        identically must map to the same concept.
        """
        entries: dict[tuple[str, ...], ConceptId] = {}
        for surface, concept in pairs:
            if not is_canonical_concept(concept):
                raise LexiconError(f"concept id {concept!r} is not canonical")
            key = _normalize_tokens(surface)
            if not key:
                raise LexiconError(f"surface phrase {surface!r} normalizes to nothing")
            prior = entries.get(key)
            if prior is not None and prior != concept:
                raise LexiconError(
                    f"surface {surface!r} maps to both {prior!r} and {concept!r}"
                )
            entries[key] = concept
        return cls(entries)


@dataclass(frozen=True, slots=True)
class RelationTable:
    """Candidate facts; build_context_kg keeps the rows a sample grounds."""

    rows: tuple[Triple, ...]

    def __len__(self) -> int:
        return len(self.rows)


def load_lexicon(path: Path | str) -> Lexicon:
    """Read surface<TAB>concept_id lines; '#' comments and blanks skipped."""
    pairs: list[tuple[str, ConceptId]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 2:
            raise LexiconError(
                f"{path}:{lineno}: expected 2 tab-separated fields, got {len(parts)}"
            )
        pairs.append((parts[0].strip(), parts[1].strip()))
    return Lexicon.from_pairs(pairs)


def load_relation_table(path: Path | str) -> RelationTable:
    """Read head<TAB>relation<TAB>tail rows with canonical names throughout."""
    rows: list[Triple] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise LexiconError(
                f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
            )
        head, rel, tail = (p.strip() for p in parts)
        for concept in (head, tail):
            if not is_canonical_concept(concept):
                raise LexiconError(f"{path}:{lineno}: non-canonical concept {concept!r}")
        rows.append(Triple(head, RelationKind.parse(rel), tail))
    unique = sorted(set(rows), key=Triple.sort_key)
    return RelationTable(tuple(unique))


def _normalize_token(tok: str) -> str:
    """Single-token flavor of concept normalization; '' if nothing survives."""
    tok = tok.lower().replace("'", "").replace("’", "")
    start, end = 0, len(tok)
    while start < end and not tok[start].isalnum():
        start += 1
    while end > start and not tok[end - 1].isalnum():
        end -= 1
    return tok[start:end]


def _normalize_tokens(text: str) -> tuple[str, ...]:
    return tuple(t for t in (_normalize_token(tok) for tok in text.split()) if t)


def _token_spans(text: str) -> list[tuple[str, int, int]]:
    """(normalized token, char start, char end) for tokens that survive
    normalization; punctuation-only tokens vanish, so a phrase may match
    across them."""
    spans: list[tuple[str, int, int]] = []
    i = 0
    n = len(text)
    while i < n:
        while i < n and text[i].isspace():
            i += 1
        if i >= n:
            break
        j = i
        while j < n and not text[j].isspace():
            j += 1
        norm = _normalize_token(text[i:j])
        if norm:
            spans.append((norm, i, j))
        i = j
    return spans


def extract_entities(text: str, lexicon: Lexicon) -> list[EntityMention]:
    """Greedy left-to-right longest-match scan; mentions never overlap.

    At each position the longest lexicon phrase wins, so a 'heart disease'
    entry shadows a bare 'heart' entry over the same words.
    """
    spans = _token_spans(text)
    mentions: list[EntityMention] = []
    i = 0
    while i < len(spans):
        matched = False
        longest = min(lexicon.max_phrase_len, len(spans) - i)
        for width in range(longest, 0, -1):
            window = tuple(s[0] for s in spans[i : i + width])
            concept = lexicon.get(window)
            if concept is not None:
                start = spans[i][1]
                end = spans[i + width - 1][2]
                mentions.append(
                    EntityMention(concept=concept, surface=text[start:end],
                                  start=start, end=end)
                )
                i += width
                matched = True
                break
        if not matched:
            i += 1
    return mentions


def filter_rows(table: RelationTable, entities: frozenset[ConceptId]) -> tuple[Triple, ...]:
    """Rows whose head and tail are both grounded in the entity set.

    Monotone in the entity set: growing it never drops a row.
    """
    return tuple(t for t in table.rows if t.head in entities and t.tail in entities)


def build_context_kg(
    question: str,
    context: str,
    lexicon: Lexicon,
    table: RelationTable,
    tag: str = "",
) -> KnowledgeGraph:
    """Per-sample graph: lexicon entities over question plus context, then
    every table row both of whose endpoints were seen."""
    entities = frozenset(
        m.concept
        for part in (question, context)
        for m in extract_entities(part, lexicon)
    )
    rows = filter_rows(table, entities)
    if not rows and entities:
        logger.debug("no table rows grounded for tag=%r (%d entities)", tag, len(entities))
    return build_graph(rows, tag=tag)
