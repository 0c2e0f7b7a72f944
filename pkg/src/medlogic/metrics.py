"""Reference metric battery for abstractive QA output.

Sentence-level scores on token sequences, plus a corpus evaluator that
aligns prediction and gold files by id and writes a TSV/JSON report pair.

Conventions:
  * tokenize() defines the token space for every lexical metric here.
  * scores live in [0, 1], except embedding_average which is a raw cosine
    and is deliberately left unclamped;
  * corpus aggregates are arithmetic means of per-sample scores;
  * A-LEN is the mean token count of the predictions.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .kg import ConceptId
from .matcher import Lexicon, extract_entities

__all__ = [
    "DimensionMismatch",
    "IdMismatch",
    "WordVectors",
    "SampleScores",
    "MetricReport",
    "tokenize",
    "bleu",
    "rouge_l",
    "meteor_lite",
    "entity_f1",
    "embedding_average",
    "evaluate_corpus",
    "write_report_tsv",
    "write_report_json",
]

logger = logging.getLogger(__name__)

TokenSeq = Sequence[str]


class DimensionMismatch(ValueError):
    """A vector file row disagrees with the file's dimensionality."""


class IdMismatch(ValueError):
    """Prediction and gold files do not cover the same sample ids."""

    def __init__(self, missing: Sequence[str], extra: Sequence[str]) -> None:
        self.missing = tuple(missing)
        self.extra = tuple(extra)
        parts = []
        if missing:
            parts.append(f"ids only in gold: {', '.join(missing)}")
        if extra:
            parts.append(f"ids only in predictions: {', '.join(extra)}")
        super().__init__("; ".join(parts) or "id sets differ")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation per token.

    Tokens that are punctuation through and through disappear. Idempotent on
    its own joined output.
    """
    out: list[str] = []
    for tok in text.lower().split():
        start, end = 0, len(tok)
        while start < end and not tok[start].isalnum():
            start += 1
        while end > start and not tok[end - 1].isalnum():
            end -= 1
        if start < end:
            out.append(tok[start:end])
    return out


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def _ngrams(tokens: TokenSeq, k: int) -> Counter:
    return Counter(tuple(tokens[i : i + k]) for i in range(len(tokens) - k + 1))


def bleu(hyp: TokenSeq, ref: TokenSeq, n: int = 4) -> float:
    """Geometric mean of clipped modified n-gram precisions with a brevity
    penalty. Any zero precision zeroes the whole score (no smoothing)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not hyp or not ref:
        logger.warning("bleu: empty %s side scores 0.0", "hypothesis" if not hyp else "reference")
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        total = len(hyp) - k + 1
        if total <= 0:
            return 0.0
        ref_counts = _ngrams(ref, k)
        clipped = sum(min(c, ref_counts[g]) for g, c in _ngrams(hyp, k).items())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    c, r = len(hyp), len(ref)
    brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
    return brevity * math.exp(log_sum / n)


# ---------------------------------------------------------------------------
# ROUGE-L
# ---------------------------------------------------------------------------


def _lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: TokenSeq, ref: TokenSeq) -> float:
    """F1 over the longest common subsequence."""
    if not hyp or not ref:
        logger.warning("rouge_l: empty side scores 0.0")
        return 0.0
    lcs = _lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hyp)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# METEOR (exact-match variant)
# ---------------------------------------------------------------------------

_CHUNK_NODE_BUDGET = 200_000


def _alignment_stats(hyp: TokenSeq, ref: TokenSeq) -> tuple[int, int]:
    """(match count, minimal chunk count) of the best exact-match alignment.

    Matches are maximal by construction: every shared token type contributes
    min(count_hyp, count_ref) pairs. Among all alignments realizing that,
    branch-and-bound finds one with the fewest chunks, where a chunk is a
    maximal run of pairs contiguous in both sequences. The search seeds
    itself with a greedy alignment and is exact within a node budget that
    covers any realistic answer length.
    """
    hyp_counts, ref_counts = Counter(hyp), Counter(ref)
    quota = {w: min(c, ref_counts[w]) for w, c in hyp_counts.items() if w in ref_counts}
    total = sum(quota.values())
    if total == 0:
        return 0, 0

    cand = [(i, w) for i, w in enumerate(hyp) if w in quota]
    ref_pos: dict[str, list[int]] = {}
    for j, w in enumerate(ref):
        if w in quota:
            ref_pos.setdefault(w, []).append(j)

    # suffix[w][k] = occurrences of w among cand[k:], for skip feasibility
    suffix: dict[str, list[int]] = {w: [0] * (len(cand) + 1) for w in quota}
    for k in range(len(cand) - 1, -1, -1):
        _, w = cand[k]
        for word, arr in suffix.items():
            arr[k] = arr[k + 1] + (1 if word == w else 0)

    def chunk_step(prev: tuple[int, int] | None, i: int, j: int) -> int:
        if prev is not None and i == prev[0] + 1 and j == prev[1] + 1:
            return 0
        return 1

    # Greedy seed: always match when quota remains, preferring continuation.
    def greedy() -> int:
        remaining = dict(quota)
        used: set[int] = set()
        prev: tuple[int, int] | None = None
        chunks = 0
        for i, w in cand:
            if remaining[w] == 0:
                continue
            choice = None
            if prev is not None and i == prev[0] + 1:
                follow = prev[1] + 1
                if follow < len(ref) and ref[follow] == w and follow not in used:
                    choice = follow
            if choice is None:
                choice = next(j for j in ref_pos[w] if j not in used)
            chunks += chunk_step(prev, i, choice)
            used.add(choice)
            remaining[w] -= 1
            prev = (i, choice)
        return chunks

    best = greedy()
    if best == 1:
        return total, 1

    remaining = dict(quota)
    skip_left = {w: hyp_counts[w] - q for w, q in quota.items()}
    used: set[int] = set()
    nodes = 0

    def search(k: int, chunks: int, prev: tuple[int, int] | None, matched: int) -> None:
        nonlocal best, nodes
        if chunks >= best:
            return
        if matched == total:
            best = chunks
            return
        if k >= len(cand) or nodes > _CHUNK_NODE_BUDGET:
            return
        nodes += 1
        i, w = cand[k]
        if remaining[w] > 0:
            candidates = [j for j in ref_pos[w] if j not in used]
            if prev is not None and i == prev[0] + 1:
                follow = prev[1] + 1
                candidates.sort(key=lambda j: (j != follow, j))
            for j in candidates:
                used.add(j)
                remaining[w] -= 1
                search(k + 1, chunks + chunk_step(prev, i, j), (i, j), matched + 1)
                remaining[w] += 1
                used.discard(j)
        if skip_left[w] > 0 and suffix[w][k + 1] >= remaining[w]:
            skip_left[w] -= 1
            search(k + 1, chunks, prev, matched)
            skip_left[w] += 1

    search(0, 0, None, 0)
    return total, best


def meteor_lite(hyp: TokenSeq, ref: TokenSeq) -> float:
    """Exact-match METEOR: harmonic mean weighted toward recall, discounted
    by a fragmentation penalty of 0.5 * (chunks / matches) ** 3."""
    if not hyp or not ref:
        logger.warning("meteor_lite: empty side scores 0.0")
        return 0.0
    matches, chunks = _alignment_stats(hyp, ref)
    if matches == 0:
        return 0.0
    precision = matches / len(hyp)
    recall = matches / len(ref)
    fmean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (chunks / matches) ** 3
    return fmean * (1.0 - penalty)


# ---------------------------------------------------------------------------
# Entity F1
# ---------------------------------------------------------------------------


def entity_f1(hyp_entities: Iterable[ConceptId], ref_entities: Iterable[ConceptId]) -> float:
    """Set F1 over concept ids. Two empty sets agree perfectly, score 1.0."""
    hyp_set, ref_set = set(hyp_entities), set(ref_entities)
    if not hyp_set and not ref_set:
        return 1.0
    if not hyp_set or not ref_set:
        return 0.0
    overlap = len(hyp_set & ref_set)
    if overlap == 0:
        return 0.0
    precision = overlap / len(hyp_set)
    recall = overlap / len(ref_set)
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# Embedding average
# ---------------------------------------------------------------------------


class WordVectors:
    """Word vectors from a whitespace text file: word v1 v2 ... vd."""

    def __init__(self, table: Mapping[str, np.ndarray], dim: int) -> None:
        self._table = dict(table)
        self.dim = dim

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, word: str) -> bool:
        return word in self._table

    def get(self, word: str) -> np.ndarray | None:
        return self._table.get(word)

    @classmethod
    def load(cls, path: Path | str) -> "WordVectors":
        table: dict[str, np.ndarray] = {}
        dim: int | None = None
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise DimensionMismatch(f"{path}:{lineno}: row has no vector values")
            if len(values) != dim:
                raise DimensionMismatch(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}"
                )
            if word in table:
                logger.warning("vector file %s:%d: duplicate word %r, last wins", path, lineno, word)
            table[word] = np.array([float(v) for v in values], dtype=np.float64)
        return cls(table, dim or 0)


def _mean_vector(tokens: TokenSeq, vectors: WordVectors) -> np.ndarray | None:
    known = [vectors.get(t) for t in tokens if t in vectors]
    if not known:
        return None
    return np.mean(np.stack(known), axis=0)


def embedding_average(hyp: TokenSeq, ref: TokenSeq, vectors: WordVectors) -> float:
    """Cosine similarity of mean word vectors. Out-of-vocabulary tokens are
    skipped; a side with no known token scores 0.0 with a warning."""
    mean_h = _mean_vector(hyp, vectors)
    mean_r = _mean_vector(ref, vectors)
    if mean_h is None or mean_r is None:
        logger.warning("embedding_average: a side has no in-vocabulary token, scoring 0.0")
        return 0.0
    norm_h = float(np.linalg.norm(mean_h))
    norm_r = float(np.linalg.norm(mean_r))
    if norm_h == 0.0 or norm_r == 0.0:
        logger.warning("embedding_average: zero-norm mean vector, scoring 0.0")
        return 0.0
    return float(np.dot(mean_h, mean_r) / (norm_h * norm_r))


# ---------------------------------------------------------------------------
# Corpus evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class SampleScores:
    id: str
    entity_f1: float
    bleu: float
    rouge_l: float
    meteor: float
    embedding_average: float
    length: int


@dataclass(frozen=True, slots=True)
class MetricReport:
    samples: tuple[SampleScores, ...]
    aggregate: dict[str, float]


# Fixed column order for the TSV and JSON reports.
_COLUMNS = (
    ("Medical Entity F1", "entity_f1"),
    ("BLEU", "bleu"),
    ("ROUGE-L", "rouge_l"),
    ("METEOR", "meteor"),
    ("Embedding Average", "embedding_average"),
    ("A-LEN", "length"),
)


def _read_id_text(path: Path | str) -> dict[str, str]:
    rows: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        obj = json.loads(raw)
        if "id" not in obj or "text" not in obj:
            raise ValueError(f"{path}:{lineno}: expected keys 'id' and 'text'")
        rows[str(obj["id"])] = str(obj["text"])
    return rows


def evaluate_corpus(
    pred_path: Path | str,
    gold_path: Path | str,
    lexicon: Lexicon,
    vectors: WordVectors,
    bleu_n: int = 4,
) -> MetricReport:
    """Score aligned prediction/gold JSONL files ({"id", "text"} per line).

    Raises IdMismatch listing ids present on only one side.
    """
    preds = _read_id_text(pred_path)
    golds = _read_id_text(gold_path)
    missing = sorted(set(golds) - set(preds))
    extra = sorted(set(preds) - set(golds))
    if missing or extra:
        raise IdMismatch(missing, extra)

    samples: list[SampleScores] = []
    for sid in sorted(golds):
        pred_text, gold_text = preds[sid], golds[sid]
        hyp, ref = tokenize(pred_text), tokenize(gold_text)
        hyp_ents = {m.concept for m in extract_entities(pred_text, lexicon)}
        ref_ents = {m.concept for m in extract_entities(gold_text, lexicon)}
        samples.append(
            SampleScores(
                id=sid,
                entity_f1=entity_f1(hyp_ents, ref_ents),
                bleu=bleu(hyp, ref, n=bleu_n),
                rouge_l=rouge_l(hyp, ref),
                meteor=meteor_lite(hyp, ref),
                embedding_average=embedding_average(hyp, ref, vectors),
                length=len(hyp),
            )
        )

    count = len(samples)
    aggregate: dict[str, float] = {}
    for _, field in _COLUMNS[:-1]:
        aggregate[field] = (
            sum(getattr(s, field) for s in samples) / count if count else 0.0
        )
    aggregate["a_len"] = sum(s.length for s in samples) / count if count else 0.0
    return MetricReport(samples=tuple(samples), aggregate=aggregate)


def write_report_tsv(report: MetricReport, path: Path | str) -> None:
    """Per-sample rows plus a MEAN row, fixed six-decimal formatting."""
    lines = ["id\t" + "\t".join(header for header, _ in _COLUMNS)]
    for s in report.samples:
        cells = [s.id]
        for _, field in _COLUMNS[:-1]:
            cells.append(f"{getattr(s, field):.6f}")
        cells.append(str(s.length))
        lines.append("\t".join(cells))
    mean_cells = ["MEAN"]
    for _, field in _COLUMNS[:-1]:
        mean_cells.append(f"{report.aggregate[field]:.6f}")
    mean_cells.append(f"{report.aggregate['a_len']:.6f}")
    lines.append("\t".join(mean_cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_report_json(report: MetricReport, path: Path | str) -> None:
    obj = {
        "per_sample": [
            {
                "id": s.id,
                "entity_f1": s.entity_f1,
                "bleu": s.bleu,
                "rouge_l": s.rouge_l,
                "meteor": s.meteor,
                "embedding_average": s.embedding_average,
                "length": s.length,
            }
            for s in report.samples
        ],
        "aggregate": report.aggregate,
    }
    Path(path).write_text(
        json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
        newline="\n",
    )
