"""Single-pass forward chaining of binary-body rules over a knowledge graph.

The pass is deliberately not a fixpoint computation: every rule matches
against the original graph only, so derived triples never feed further
derivations. This keeps the provenance of each conclusion a flat pair of
original premises.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .kg import KnowledgeGraph, RelationKind, Triple, build_graph
from .rules import Atom, Rule

__all__ = [
    "Binding",
    "Derivation",
    "LogicInjectedGraph",
    "match_body",
    "apply_rule",
    "infuse",
    "count_is_a_derivations",
    "write_logic_file",
    "read_logic_file",
]

# The engine commits to the three canonical variable names. Rules are free to
# use other names at the DSL level, but application is defined over X, Y, Z.
_ENGINE_VARS = frozenset({"X", "Y", "Z"})


@dataclass(frozen=True, slots=True)
class Binding:
    """Values taken by the rule variables; a variable a rule omits stays None."""

    x: str | None
    y: str | None
    z: str | None

    def sort_key(self) -> tuple[str, str, str]:
        return (self.x or "", self.y or "", self.z or "")


@dataclass(frozen=True, slots=True)
class Derivation:
    """One rule firing: the binding, its premise pair, and the conclusions.

    conclusions holds a single triple for ordinary rules. For a rule with an
    alternative head it holds both candidates and disjunctive is True; the
    pair is one derivation, not two.
    """

    rule_name: str
    binding: Binding
    premises: tuple[Triple, Triple]
    conclusions: tuple[Triple, ...]
    disjunctive: bool

    def sort_key(self) -> tuple:
        return (self.rule_name,) + self.binding.sort_key()


@dataclass(frozen=True, eq=False)
class LogicInjectedGraph:
    """Result of one forward pass: per-rule derivations and the merged graph.

    aggregated contains every original triple plus every conclusion,
    deduplicated; disjunctive alternatives are merged like any other
    conclusion and keep their alternative character only in per_rule.
    """

    original: KnowledgeGraph
    per_rule: Mapping[str, frozenset[Derivation]]
    aggregated: KnowledgeGraph

    def all_derivations(self) -> tuple[Derivation, ...]:
        out: list[Derivation] = []
        for derivs in self.per_rule.values():
            out.extend(derivs)
        return tuple(sorted(out, key=Derivation.sort_key))

    def conclusions_by_rule(self) -> dict[str, tuple[Triple, ...]]:
        """Unique sorted conclusion triples per rule, empty rules omitted."""
        grouped: dict[str, tuple[Triple, ...]] = {}
        for name, derivs in self.per_rule.items():
            triples = sorted(
                {t for d in derivs for t in d.conclusions}, key=Triple.sort_key
            )
            if triples:
                grouped[name] = tuple(triples)
        return grouped


def _check_engine_vars(rule: Rule) -> None:
    used = rule.body_variables()
    for atom in rule.head_atoms():
        used |= atom.variables()
    stray = used - _ENGINE_VARS
    if stray:
        raise ValueError(
            f"rule {rule.name!r} uses variables {sorted(stray)}; the engine "
            f"binds X, Y, Z only"
        )


def _extend(env: dict[str, str], atom: Atom, fact: Triple) -> bool:
    # Relation equality is checked by the caller via the index.
    for var, value in ((atom.arg1, fact.head), (atom.arg2, fact.tail)):
        bound = env.get(var)
        if bound is None:
            env[var] = value
        elif bound != value:
            return False
    return True


def _instantiate(atom: Atom, env: Mapping[str, str]) -> Triple:
    return Triple(env[atom.arg1], atom.relation, env[atom.arg2])


def match_body(rule: Rule, graph: KnowledgeGraph) -> list[Binding]:
    """All variable bindings under which both body atoms hold in the graph.

    Both atoms must be instantiated even when the rule joins them with the
    alternative connective; a firing always names a full premise pair.
    """
    _check_engine_vars(rule)
    index: dict[RelationKind, list[Triple]] = {}
    for t in graph:
        index.setdefault(t.relation, []).append(t)

    first, second = rule.body
    found: set[Binding] = set()
    for t1 in index.get(first.relation, ()):
        base: dict[str, str] = {}
        if not _extend(base, first, t1):
            continue
        for t2 in index.get(second.relation, ()):
            env = dict(base)
            if not _extend(env, second, t2):
                continue
            found.add(Binding(env.get("X"), env.get("Y"), env.get("Z")))
    return sorted(found, key=Binding.sort_key)


def apply_rule(rule: Rule, graph: KnowledgeGraph) -> frozenset[Derivation]:
    """Fire a rule once against a graph and collect every derivation.

    Conclusions already present in the graph are kept; downstream consumers
    deduplicate on aggregation, and dropping them here would hide support.
    """
    _check_engine_vars(rule)
    index: dict[RelationKind, list[Triple]] = {}
    for t in graph:
        index.setdefault(t.relation, []).append(t)

    first, second = rule.body
    derivations: set[Derivation] = set()
    for t1 in index.get(first.relation, ()):
        base: dict[str, str] = {}
        if not _extend(base, first, t1):
            continue
        for t2 in index.get(second.relation, ()):
            env = dict(base)
            if not _extend(env, second, t2):
                continue
            conclusions = tuple(_instantiate(a, env) for a in rule.head_atoms())
            derivations.add(
                Derivation(
                    rule_name=rule.name,
                    binding=Binding(env.get("X"), env.get("Y"), env.get("Z")),
                    premises=(t1, t2),
                    conclusions=conclusions,
                    disjunctive=rule.is_disjunctive,
                )
            )
    return frozenset(derivations)


def infuse(graph: KnowledgeGraph, rules: Iterable[Rule]) -> LogicInjectedGraph:
    """Apply every rule to the original graph in one pass and merge results.

    Rules never see each other's conclusions: chaining depth is exactly one.
    """
    per_rule: dict[str, frozenset[Derivation]] = {}
    for rule in rules:
        if rule.name in per_rule:
            raise ValueError(f"duplicate rule name {rule.name!r}")
        per_rule[rule.name] = apply_rule(rule, graph)

    derived = [t for derivs in per_rule.values() for d in derivs for t in d.conclusions]
    aggregated = graph.union(derived)
    return LogicInjectedGraph(original=graph, per_rule=per_rule, aggregated=aggregated)


def count_is_a_derivations(lig: LogicInjectedGraph) -> int:
    """Derivations resting on a taxonomy premise, broken out for reports."""
    return sum(
        1
        for derivs in lig.per_rule.values()
        for d in derivs
        if any(p.relation is RelationKind.IS_A for p in d.premises)
    )


# ---------------------------------------------------------------------------
# File form
# ---------------------------------------------------------------------------

_DISJ_MARK = "disj"


def write_logic_file(lig: LogicInjectedGraph, path: Path | str) -> None:
    """One conclusion per line: rule, head, relation, tail, optional marker.

    Lines are unique and sorted, so identical inputs produce identical bytes.
    """
    lines: set[str] = set()
    for name, derivs in lig.per_rule.items():
        for d in derivs:
            for t in d.conclusions:
                line = f"{name}\t{t.as_line()}"
                if d.disjunctive:
                    line += f"\t{_DISJ_MARK}"
                lines.add(line)
    body = "\n".join(sorted(lines))
    if body:
        body += "\n"
    Path(path).write_text(body, encoding="utf-8", newline="\n")


def read_logic_file(path: Path | str) -> dict[str, list[tuple[Triple, bool]]]:
    """Inverse of write_logic_file, keyed by rule name."""
    out: dict[str, list[tuple[Triple, bool]]] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) == 5 and parts[4] == _DISJ_MARK:
            disj = True
        elif len(parts) == 4:
            disj = False
        else:
            raise ValueError(f"malformed logic line: {raw!r}")
        triple = Triple(parts[1], RelationKind.parse(parts[2]), parts[3])
        out.setdefault(parts[0], []).append((triple, disj))
    return out
