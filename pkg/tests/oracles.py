"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written with different algorithms and data
structures than the shipped code: recursive memoized LCS instead of the
iterative table, exhaustive alignment enumeration instead of branch and
bound, plain-dict n-gram counting instead of Counter, list arithmetic
instead of numpy. Slow is fine; these only run on small inputs.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Mapping, Sequence


def lcs_oracle(a: Sequence[str], b: Sequence[str]) -> int:
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def rouge_l_oracle(hyp: Sequence[str], ref: Sequence[str]) -> float:
    if not hyp or not ref:
        return 0.0
    lcs = lcs_oracle(hyp, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(hyp)
    r = lcs / len(ref)
    return 2 * p * r / (p + r)


def bleu_oracle(hyp: Sequence[str], ref: Sequence[str], n: int = 4) -> float:
    if not hyp or not ref:
        return 0.0
    log_precisions = []
    for k in range(1, n + 1):
        hyp_grams = [tuple(hyp[i : i + k]) for i in range(len(hyp) - k + 1)]
        ref_grams = [tuple(ref[i : i + k]) for i in range(len(ref) - k + 1)]
        if not hyp_grams:
            return 0.0
        ref_counts: dict[tuple, int] = {}
        for g in ref_grams:
            ref_counts[g] = ref_counts.get(g, 0) + 1
        hyp_counts: dict[tuple, int] = {}
        for g in hyp_grams:
            hyp_counts[g] = hyp_counts.get(g, 0) + 1
        clipped = 0
        for g, c in hyp_counts.items():
            clipped += c if c <= ref_counts.get(g, 0) else ref_counts.get(g, 0)
        if clipped == 0:
            return 0.0
        log_precisions.append(math.log(clipped / len(hyp_grams)))
    c, r = len(hyp), len(ref)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(sum(log_precisions) / n)


def alignment_oracle(hyp: Sequence[str], ref: Sequence[str]) -> tuple[int, int]:
    """(max matches, min chunks over maximum alignments) by full enumeration.

    Exponential; keep inputs under ~8 matchable tokens per side.
    """
    n, m = len(hyp), len(ref)
    best_matches = 0
    best_chunks = 0

    def chunk_count(pairs: list[tuple[int, int]]) -> int:
        chunks = 0
        prev = None
        for i, j in pairs:  # pairs arrive sorted by hyp index
            if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
                chunks += 1
            prev = (i, j)
        return chunks

    def rec(i: int, used: frozenset[int], pairs: list[tuple[int, int]]) -> None:
        nonlocal best_matches, best_chunks
        if i == n:
            matches = len(pairs)
            chunks = chunk_count(pairs)
            if matches > best_matches or (
                matches == best_matches and (best_matches == 0 or chunks < best_chunks)
            ):
                best_matches, best_chunks = matches, chunks
            return
        rec(i + 1, used, pairs)
        for j in range(m):
            if j not in used and ref[j] == hyp[i]:
                rec(i + 1, used | {j}, pairs + [(i, j)])

    rec(0, frozenset(), [])
    return best_matches, (best_chunks if best_matches else 0)


def meteor_oracle(hyp: Sequence[str], ref: Sequence[str]) -> float:
    if not hyp or not ref:
        return 0.0
    matches, chunks = alignment_oracle(hyp, ref)
    if matches == 0:
        return 0.0
    p = matches / len(hyp)
    r = matches / len(ref)
    fmean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return fmean * (1 - penalty)


def embedding_oracle(
    hyp: Sequence[str], ref: Sequence[str], table: Mapping[str, Sequence[float]]
) -> float:
    def mean_vec(tokens: Sequence[str]) -> list[float] | None:
        rows = [table[t] for t in tokens if t in table]
        if not rows:
            return None
        dim = len(rows[0])
        return [sum(row[d] for row in rows) / len(rows) for d in range(dim)]

    mh, mr = mean_vec(hyp), mean_vec(ref)
    if mh is None or mr is None:
        return 0.0
    dot = sum(x * y for x, y in zip(mh, mr))
    nh = math.sqrt(sum(x * x for x in mh))
    nr = math.sqrt(sum(x * x for x in mr))
    if nh == 0 or nr == 0:
        return 0.0
    return dot / (nh * nr)


def entity_f1_oracle(hyp_set: set[str], ref_set: set[str]) -> float:
    if not hyp_set and not ref_set:
        return 1.0
    overlap = len(hyp_set & ref_set)
    if overlap == 0:
        return 0.0
    p = overlap / len(hyp_set)
    r = overlap / len(ref_set)
    return 2 * p * r / (p + r)


# ---------------------------------------------------------------------------
# Random input generators for property tests
# ---------------------------------------------------------------------------


def random_graph(rng, max_triples: int = 50, max_concepts: int = 20):
    """Random small knowledge graph; dense enough that rules actually fire."""
    from medlogic.kg import RelationKind, Triple, build_graph

    concepts = [f"c{i}" for i in range(rng.randint(2, max_concepts))]
    kinds = list(RelationKind)
    n = rng.randint(0, max_triples)
    triples = [
        Triple(rng.choice(concepts), rng.choice(kinds), rng.choice(concepts))
        for _ in range(n)
    ]
    return build_graph(triples, tag="fuzz")
