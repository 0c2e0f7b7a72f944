"""Tiny first-order Horn-style rule language over the closed relation set.

Rule text looks like::

    treatment_classification: treat(X,Y) & is_a(Y,Z) => treat(X,Z)

A rule has a lowercase name, a body of exactly two atoms joined by ``&`` or
``|``, and a head of one atom, optionally two joined by ``|``. Variables are
identifiers starting with an uppercase letter. Every head variable must occur
in the body (range restriction), so rule application never invents concepts.

parse_rule and render_rule are mutual inverses on well-formed input:
parse(render(ast)) == ast, and render(parse(text)) is the canonical
pretty-printed spelling of text.
"""

from __future__ import annotations

import enum
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .kg import RelationKind, UnknownRelationError

__all__ = [
    "Atom",
    "Connective",
    "Rule",
    "RuleSyntaxError",
    "RangeRestrictionError",
    "UnknownRelationError",
    "RuleWarning",
    "parse_rule",
    "render_rule",
    "parse_rules_text",
    "load_rules",
    "builtin_rules",
    "RULE_DISPLAY_NAMES",
]


class RuleSyntaxError(ValueError):
    """Malformed rule text. Carries the character position and what was expected."""

    def __init__(self, message: str, position: int, expected: str = "") -> None:
        super().__init__(f"at position {position}: {message}")
        self.message = message
        self.position = position
        self.expected = expected


class RangeRestrictionError(ValueError):
    """A head variable does not occur in the rule body."""


class RuleWarning(UserWarning):
    """Non-fatal oddity in an accepted rule (e.g. an atom reusing a variable)."""


class Connective(enum.Enum):
    AND = "&"
    OR = "|"


@dataclass(frozen=True, slots=True)
class Atom:
    """relation(arg1, arg2) with variable arguments."""

    relation: RelationKind
    arg1: str
    arg2: str

    def variables(self) -> frozenset[str]:
        return frozenset((self.arg1, self.arg2))


@dataclass(frozen=True, slots=True)
class Rule:
    """Parsed rule: two body atoms, one connective, one or two head atoms.

    head_alt is the optional second head atom; when present the conclusions
    are alternatives (a disjunctive head), not a conjunction.
    """

    name: str
    body: tuple[Atom, Atom]
    connective: Connective
    head: Atom
    head_alt: Atom | None = None

    @property
    def is_disjunctive(self) -> bool:
        return self.head_alt is not None

    def body_variables(self) -> frozenset[str]:
        return self.body[0].variables() | self.body[1].variables()

    def head_atoms(self) -> tuple[Atom, ...]:
        if self.head_alt is None:
            return (self.head,)
        return (self.head, self.head_alt)


# ---------------------------------------------------------------------------
# Scanner
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<arrow>=>)"
    r"|(?P<name>[a-z][a-z0-9_]*)"
    r"|(?P<var>[A-Z][A-Za-z0-9]*)"
    r"|(?P<punct>[:(),&|])"
)


@dataclass(frozen=True, slots=True)
class _Token:
    kind: str  # name | var | arrow | punct | end
    text: str
    pos: int


def _scan(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise RuleSyntaxError(
                f"unexpected character {text[pos]!r}", pos, expected="token"
            )
        if m.lastgroup != "ws":
            kind = m.lastgroup
            if kind == "punct":
                kind = m.group()
            tokens.append(_Token(str(kind), m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str) -> None:
        self.tokens = _scan(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self, kind: str, expected: str) -> _Token:
        tok = self.tokens[self.i]
        if tok.kind != kind:
            found = tok.text if tok.kind != "end" else "end of input"
            raise RuleSyntaxError(
                f"expected {expected}, found {found!r}", tok.pos, expected=expected
            )
        self.i += 1
        return tok

    def atom(self) -> Atom:
        rel_tok = self.take("name", "relation name")
        relation = RelationKind.parse(rel_tok.text)
        self.take("(", "'('")
        v1 = self.take("var", "variable")
        self.take(",", "','")
        v2 = self.take("var", "variable")
        self.take(")", "')'")
        return Atom(relation, v1.text, v2.text)

    def atom_chain(self) -> tuple[list[Atom], list[str]]:
        """One atom followed by any number of (connective, atom) pairs."""
        atoms = [self.atom()]
        connectives: list[str] = []
        while self.peek().kind in ("&", "|"):
            connectives.append(self.take(self.peek().kind, "connective").text)
            atoms.append(self.atom())
        return atoms, connectives


# ---------------------------------------------------------------------------
# Parsing and rendering
# ---------------------------------------------------------------------------


def parse_rule(text: str) -> Rule:
    """Parse a single rule line into its AST.

    Raises RuleSyntaxError (with position and expected-token info),
    UnknownRelationError, or RangeRestrictionError. A rule whose atom uses
    the same variable twice parses fine but emits a RuleWarning.
    """
    p = _Parser(text)
    name_tok = p.take("name", "rule name")
    p.take(":", "':'")

    body_atoms, body_conns = p.atom_chain()
    if len(body_atoms) != 2:
        raise RuleSyntaxError(
            f"rule body must contain exactly 2 atoms, found {len(body_atoms)}",
            name_tok.pos,
            expected="2 body atoms",
        )
    connective = Connective(body_conns[0])

    arrow = p.take("arrow", "'=>'")
    head_atoms, head_conns = p.atom_chain()
    if any(c == "&" for c in head_conns):
        raise RuleSyntaxError(
            "head atoms may only be joined by '|'", arrow.pos, expected="'|'"
        )
    if len(head_atoms) > 2:
        raise RuleSyntaxError(
            f"rule head must contain 1 or 2 atoms, found {len(head_atoms)}",
            arrow.pos,
            expected="at most 2 head atoms",
        )
    p.take("end", "end of rule")

    rule = Rule(
        name=name_tok.text,
        body=(body_atoms[0], body_atoms[1]),
        connective=connective,
        head=head_atoms[0],
        head_alt=head_atoms[1] if len(head_atoms) == 2 else None,
    )

    body_vars = rule.body_variables()
    for atom in rule.head_atoms():
        for var in (atom.arg1, atom.arg2):
            if var not in body_vars:
                raise RangeRestrictionError(
                    f"head variable {var} of rule {rule.name!r} does not occur "
                    f"in the body"
                )
    for atom in rule.body + rule.head_atoms():
        if atom.arg1 == atom.arg2:
            warnings.warn(
                f"atom {_render_atom(atom)} in rule {rule.name!r} uses the "
                f"same variable twice",
                RuleWarning,
                stacklevel=2,
            )
    return rule


def _render_atom(atom: Atom) -> str:
    return f"{atom.relation.value}({atom.arg1},{atom.arg2})"


def render_rule(rule: Rule) -> str:
    """Canonical single-line spelling of a rule."""
    text = (
        f"{rule.name}: {_render_atom(rule.body[0])} {rule.connective.value} "
        f"{_render_atom(rule.body[1])} => {_render_atom(rule.head)}"
    )
    if rule.head_alt is not None:
        text += f" | {_render_atom(rule.head_alt)}"
    return text


def parse_rules_text(text: str) -> tuple[Rule, ...]:
    """Parse a rule file body: one rule per line, '#' comments, blank lines ok."""
    rules: list[Rule] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rule = parse_rule(line)
        except (RuleSyntaxError, RangeRestrictionError, UnknownRelationError) as exc:
            raise type(exc)(*_with_line(exc, lineno)) from None
        if rule.name in seen:
            raise RuleSyntaxError(
                f"duplicate rule name {rule.name!r} (line {lineno})", 0,
                expected="unique rule name",
            )
        seen.add(rule.name)
        rules.append(rule)
    return tuple(rules)


def _with_line(exc: Exception, lineno: int) -> tuple:
    if isinstance(exc, RuleSyntaxError):
        return (f"line {lineno}: {exc.message}", exc.position, exc.expected)
    return (f"line {lineno}: {exc.args[0]}",)


def load_rules(path: Path | str) -> tuple[Rule, ...]:
    return parse_rules_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Built-in rule set
# ---------------------------------------------------------------------------

_R = RelationKind


def builtin_rules() -> tuple[Rule, ...]:
    """The six shipped rules, constructed directly (not parsed from text).

    Order is fixed and mirrors rules/medlogic6.rules. The bundled file must
    parse to exactly these ASTs; keeping two independent sources makes that
    check meaningful.
    """
    return (
        Rule(
            "co_occurrence",
            (Atom(_R.CO_OCCURS_WITH, "X", "Y"), Atom(_R.AFFECTS, "Y", "Z")),
            Connective.AND,
            Atom(_R.AFFECTS, "X", "Z"),
        ),
        Rule(
            "prevention_causation",
            (Atom(_R.PREVENT, "X", "Y"), Atom(_R.CAUSES, "Y", "Z")),
            Connective.AND,
            Atom(_R.PREVENT, "X", "Z"),
        ),
        Rule(
            "treatment_classification",
            (Atom(_R.TREAT, "X", "Y"), Atom(_R.IS_A, "Y", "Z")),
            Connective.AND,
            Atom(_R.TREAT, "X", "Z"),
        ),
        Rule(
            "diagnosis_interaction",
            (Atom(_R.DIAGNOSIS, "X", "Y"), Atom(_R.INTERACTS_WITH, "X", "Z")),
            Connective.AND,
            Atom(_R.DIAGNOSIS, "Z", "Y"),
        ),
        Rule(
            "conjunction",
            (Atom(_R.CO_OCCURS_WITH, "X", "Y"), Atom(_R.AFFECTS, "X", "Z")),
            Connective.AND,
            Atom(_R.CO_OCCURS_WITH, "Y", "Z"),
        ),
        Rule(
            "disjunction",
            (Atom(_R.PREVENT, "X", "Y"), Atom(_R.CAUSES, "Y", "Z")),
            Connective.OR,
            Atom(_R.PREVENT, "X", "Z"),
            Atom(_R.CAUSES, "X", "Z"),
        ),
    )


# Human-readable titles used when serializing per-rule triple groups.
RULE_DISPLAY_NAMES: dict[str, str] = {
    "co_occurrence": "Co-occurrence",
    "prevention_causation": "Prevention and Causation",
    "treatment_classification": "Treatment and Classification",
    "diagnosis_interaction": "Diagnosis and Interaction",
    "conjunction": "Conjunction",
    "disjunction": "Disjunction",
}


def iter_display_names() -> Iterator[tuple[str, str]]:
    """(rule_name, display_name) pairs in built-in rule order."""
    for rule in builtin_rules():
        yield rule.name, RULE_DISPLAY_NAMES[rule.name]
