"""Brute-force reference implementation of rule application.

Deliberately shares no matching code with the engine: it walks every ordered
pair of triples (both orders, a triple paired with itself included) and
unifies each pair against the rule body from scratch. Quadratic on purpose;
refuses graphs past a hard bound instead of getting clever.

Used as the ground truth the fast engine is checked against.
"""

from __future__ import annotations

from .engine import Binding, Derivation
from .kg import KnowledgeGraph, Triple
from .rules import Rule

__all__ = ["GraphTooLarge", "MAX_ORACLE_TRIPLES", "oracle_apply"]

MAX_ORACLE_TRIPLES = 10_000


class GraphTooLarge(ValueError):
    """The graph exceeds the size the quadratic oracle is willing to walk."""


def oracle_apply(rule: Rule, graph: KnowledgeGraph) -> frozenset[Derivation]:
    """Exhaustively enumerate rule firings over all ordered premise pairs."""
    if len(graph) > MAX_ORACLE_TRIPLES:
        raise GraphTooLarge(
            f"{len(graph)} triples exceeds the oracle bound of {MAX_ORACLE_TRIPLES}"
        )
    for atom in rule.body + rule.head_atoms():
        for var in (atom.arg1, atom.arg2):
            if var not in ("X", "Y", "Z"):
                raise ValueError(
                    f"rule {rule.name!r} uses variable {var}; X, Y, Z expected"
                )

    atom1, atom2 = rule.body
    rel1 = atom1.relation
    rel2 = atom2.relation
    triples = list(graph)
    found: set[Derivation] = set()

    for first in triples:
        if first.relation is not rel1:
            continue
        for second in triples:
            if second.relation is not rel2:
                continue
            env: dict[str, str] = {}
            consistent = True
            for atom, fact in ((atom1, first), (atom2, second)):
                for var, value in ((atom.arg1, fact.head), (atom.arg2, fact.tail)):
                    if env.setdefault(var, value) != value:
                        consistent = False
                        break
                if not consistent:
                    break
            if not consistent:
                continue
            conclusions = tuple(
                Triple(env[a.arg1], a.relation, env[a.arg2])
                for a in rule.head_atoms()
            )
            found.add(
                Derivation(
                    rule_name=rule.name,
                    binding=Binding(env.get("X"), env.get("Y"), env.get("Z")),
                    premises=(first, second),
                    conclusions=conclusions,
                    disjunctive=rule.is_disjunctive,
                )
            )
    return frozenset(found)
