"""Core knowledge-graph types: concept ids, relation kinds, triples, graphs.

Everything here is immutable after construction. Graphs deduplicate their
triples and keep them in a total lexicographic order so that every
serialization of the same graph is byte-identical.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

__all__ = [
    "ConceptId",
    "EmptyConcept",
    "UnknownRelationError",
    "RelationKind",
    "Triple",
    "KnowledgeGraph",
    "normalize_concept",
    "is_canonical_concept",
    "build_graph",
    "write_graph_file",
    "read_graph_file",
]

# A concept id is a plain string in canonical form: lowercase, tokens joined
# by single underscores, no leading/trailing underscore. normalize_concept is
# the only sanctioned way to produce one from raw text.
ConceptId = str

# Apostrophe variants are removed outright so "Behcet's" becomes "behcets".
_APOSTROPHES = ("'", "’")


class EmptyConcept(ValueError):
    """Raised when normalization leaves nothing usable of a concept string."""


class UnknownRelationError(ValueError):
    """Raised when a relation name is not one of the closed set of kinds."""


class RelationKind(enum.Enum):
    """Closed set of edge labels. The value is the canonical name.

    parse() and the .value attribute form a bijection: every member has
    exactly one canonical spelling and every canonical spelling names
    exactly one member.
    """

    CO_OCCURS_WITH = "co_occurs_with"
    PREVENT = "prevent"
    TREAT = "treat"
    DIAGNOSIS = "diagnosis"
    INTERACTS_WITH = "interacts_with"
    AFFECTS = "affects"
    CAUSES = "causes"
    IS_A = "is_a"

    @classmethod
    def parse(cls, name: str) -> "RelationKind":
        """Map a canonical relation name to its kind.

        Strict on purpose: inflected or hyphenated variants belong to the
        lenient model-output parser, not to the core type.
        """
        try:
            return cls(name)
        except ValueError:
            known = ", ".join(k.value for k in cls)
            raise UnknownRelationError(
                f"unknown relation {name!r}; expected one of: {known}"
            ) from None

    def __lt__(self, other: "RelationKind") -> bool:
        if not isinstance(other, RelationKind):
            return NotImplemented
        return self.value < other.value


def normalize_concept(raw: str) -> ConceptId:
    """Normalize raw concept text to its canonical id.

    Lowercases, removes apostrophes, strips non-alphanumeric characters from
    token edges, and joins tokens with single underscores. Idempotent.

    Raises EmptyConcept if nothing survives (empty or punctuation-only input).
    """
    text = raw.lower()
    for ch in _APOSTROPHES:
        text = text.replace(ch, "")
    tokens = []
    for tok in text.split():
        # Underscores count as punctuation here, which enforces the
        # no-edge-underscore rule even for pre-joined input.
        start = 0
        end = len(tok)
        while start < end and not tok[start].isalnum():
            start += 1
        while end > start and not tok[end - 1].isalnum():
            end -= 1
        if start < end:
            tokens.append(tok[start:end])
    if not tokens:
        raise EmptyConcept(f"concept text {raw!r} normalizes to nothing")
    return "_".join(tokens)


def is_canonical_concept(text: str) -> bool:
    """True if text is already in canonical concept form."""
    try:
        return normalize_concept(text) == text
    except EmptyConcept:
        return False


@dataclass(frozen=True, slots=True)
class Triple:
    """A directed labeled edge. Self-loops are legal."""

    head: ConceptId
    relation: RelationKind
    tail: ConceptId

    def sort_key(self) -> tuple[str, str, str]:
        return (self.head, self.relation.value, self.tail)

    def __lt__(self, other: "Triple") -> bool:
        if not isinstance(other, Triple):
            return NotImplemented
        return self.sort_key() < other.sort_key()

    def as_line(self) -> str:
        return f"{self.head}\t{self.relation.value}\t{self.tail}"

    @classmethod
    def from_line(cls, line: str) -> "Triple":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise ValueError(
                f"expected 3 tab-separated fields, got {len(parts)}: {line!r}"
            )
        head, rel, tail = parts
        return cls(head, RelationKind.parse(rel), tail)


@dataclass(frozen=True, slots=True)
class KnowledgeGraph:
    """Deduplicated, totally ordered set of triples with an optional tag.

    The tag carries provenance (for example the originating sample id) and
    does not participate in equality of the triple set.
    """

    triples: tuple[Triple, ...]
    tag: str = ""

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self.triples)

    def __contains__(self, triple: object) -> bool:
        return triple in set(self.triples)

    def concepts(self) -> tuple[ConceptId, ...]:
        seen = {t.head for t in self.triples} | {t.tail for t in self.triples}
        return tuple(sorted(seen))

    def union(self, extra: Iterable[Triple], tag: str | None = None) -> "KnowledgeGraph":
        merged = list(self.triples)
        merged.extend(extra)
        return build_graph(merged, tag=self.tag if tag is None else tag)


def build_graph(triples: Iterable[Triple], tag: str = "") -> KnowledgeGraph:
    """Build a graph from any iterable of triples.

    Duplicates collapse and order is canonical, so feeding a graph's own
    triples back in reproduces it exactly.
    """
    unique = sorted(set(triples), key=Triple.sort_key)
    return KnowledgeGraph(tuple(unique), tag=tag)


def write_graph_file(graph: KnowledgeGraph, path: Path | str) -> None:
    """Write one triple per line, tab-separated, sorted, UTF-8, LF endings."""
    lines = [t.as_line() for t in graph.triples]
    body = "\n".join(lines)
    if body:
        body += "\n"
    Path(path).write_text(body, encoding="utf-8", newline="\n")


def read_graph_file(path: Path | str, tag: str = "") -> KnowledgeGraph:
    """Read a graph file written by write_graph_file.

    Blank lines and '#' comment lines are tolerated on input.
    """
    triples = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        triples.append(Triple.from_line(raw))
    return build_graph(triples, tag=tag)
