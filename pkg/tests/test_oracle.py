"""The brute-force rule oracle: its own contract, then engine agreement.

The large-scale agreement sweep lives in the acceptance suite; this file
keeps a smaller seeded sweep so plain unit runs still exercise the pairing.
"""

import random

import pytest

from medlogic.engine import apply_rule
from medlogic.kg import RelationKind as R
from medlogic.kg import Triple, build_graph
from medlogic.oracle import MAX_ORACLE_TRIPLES, GraphTooLarge, oracle_apply
from medlogic.rules import builtin_rules, parse_rule

from oracles import random_graph


def test_oracle_matches_hand_case():
    g = build_graph(
        [
            Triple("aspirin", R.PREVENT, "clots"),
            Triple("clots", R.CAUSES, "stroke"),
            Triple("clots", R.CAUSES, "heart_attacks"),
        ]
    )
    rule = next(r for r in builtin_rules() if r.name == "prevention_causation")
    derivs = oracle_apply(rule, g)
    assert {t for d in derivs for t in d.conclusions} == {
        Triple("aspirin", R.PREVENT, "stroke"),
        Triple("aspirin", R.PREVENT, "heart_attacks"),
    }
    assert len(derivs) == 2


def test_oracle_refuses_oversized_graph():
    triples = [
        Triple(f"a{i}", R.AFFECTS, f"b{i}") for i in range(MAX_ORACLE_TRIPLES + 1)
    ]
    g = build_graph(triples)
    with pytest.raises(GraphTooLarge):
        oracle_apply(builtin_rules()[0], g)


def test_oracle_rejects_foreign_variables():
    rule = parse_rule("w: treat(A,B) & is_a(B,C) => treat(A,C)")
    with pytest.raises(ValueError, match="X, Y, Z expected"):
        oracle_apply(rule, build_graph([]))


def test_oracle_pairs_triple_with_itself():
    rule = parse_rule("loop: affects(X,Y) & affects(Y,Z) => affects(X,Z)")
    g = build_graph([Triple("a", R.AFFECTS, "a")])
    derivs = oracle_apply(rule, g)
    (d,) = derivs
    assert d.premises == (Triple("a", R.AFFECTS, "a"), Triple("a", R.AFFECTS, "a"))


def test_engine_agrees_with_oracle_seeded_sweep():
    rng = random.Random(99)
    rules = builtin_rules()
    for _ in range(100):
        g = random_graph(rng, max_triples=40, max_concepts=10)
        for rule in rules:
            assert apply_rule(rule, g) == oracle_apply(rule, g), (
                rule.name,
                g.triples,
            )
