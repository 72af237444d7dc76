"""Clause and program containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

from .terms import Struct, Var, apply_substitution, struct, term_key, variables

DECLARATION_FUNCTORS = frozenset({"type", "mode", "rand", "rank", "entity", "link"})


def conj_to_list(t) -> list:
    """Flatten a ``','``-conjunction into a list of goals."""
    out = []
    while type(t) is Struct and t.functor == "," and len(t.args) == 2:
        out.extend(conj_to_list(t.args[0]))
        t = t.args[1]
    if t != "true":
        out.append(t)
    return out


def list_to_conj(goals):
    goals = list(goals)
    if not goals:
        return "true"
    t = goals[-1]
    for g in reversed(goals[:-1]):
        t = struct(",", g, t)
    return t


@dataclass(frozen=True)
class Clause:
    """Definite clause ``head := body``; a fact when ``body`` is empty."""

    head: object
    body: tuple = ()
    pos: tuple | None = field(default=None, compare=False, repr=False)

    @property
    def key(self):
        return term_key(self.head)

    @property
    def is_fact(self) -> bool:
        return not self.body

    def substitute(self, theta):
        return Clause(
            apply_substitution(self.head, theta),
            tuple(apply_substitution(b, theta) for b in self.body),
            self.pos,
        )

    def variables(self) -> list[Var]:
        seen = dict.fromkeys(variables((self.head, self.body)))
        return list(seen)

    def __str__(self):
        from .printer import format_clause

        return format_clause(self)


@dataclass(frozen=True)
class DistClause:
    """Distributional clause ``head ~ dist := body``."""

    head: object
    dist: object
    body: tuple = ()
    pos: tuple | None = field(default=None, compare=False, repr=False)

    @property
    def key(self):
        return term_key(self.head)

    @property
    def attribute(self) -> str:
        return self.key[0]

    @property
    def is_fact(self) -> bool:
        return not self.body

    def substitute(self, theta):
        return DistClause(
            apply_substitution(self.head, theta),
            apply_substitution(self.dist, theta),
            tuple(apply_substitution(b, theta) for b in self.body),
            self.pos,
        )

    def variables(self) -> list[Var]:
        return list(dict.fromkeys(variables((self.head, self.dist, self.body))))

    def __str__(self):
        from .printer import format_clause

        return format_clause(self)


Item = Union[Clause, DistClause]


@dataclass(frozen=True)
class Program:
    """Immutable ordered collection of clauses and bias declarations.

    ``items`` keeps source order.  Declarations (``type``, ``mode``,
    ``rand``, ``rank``, ``entity``, ``link``) are stored as :class:`Clause`
    facts and exposed separately through :attr:`declarations`.
    """

    items: tuple = ()
    source: str = field(default="<string>", compare=False)

    @classmethod
    def from_items(cls, items: Iterable[Item], source: str = "<string>") -> "Program":
        return cls(tuple(items), source)

    @property
    def declarations(self) -> tuple:
        return tuple(c for c in self.items if _is_declaration(c))

    @property
    def clauses(self) -> tuple:
        """Definite clauses and facts (declarations excluded)."""
        return tuple(c for c in self.items if type(c) is Clause and not _is_declaration(c))

    @property
    def facts(self) -> tuple:
        return tuple(c for c in self.clauses if c.is_fact)

    @property
    def rules(self) -> tuple:
        return tuple(c for c in self.clauses if not c.is_fact)

    @property
    def dist_clauses(self) -> tuple:
        return tuple(c for c in self.items if type(c) is DistClause)

    @property
    def rank(self) -> tuple | None:
        for d in self.declarations:
            if d.head.functor == "rank":
                return tuple(d.head.args[0])
        return None

    def __add__(self, other: "Program") -> "Program":
        return Program(self.items + tuple(other.items), self.source)

    def extended(self, items: Iterable[Item]) -> "Program":
        return Program(self.items + tuple(items), self.source)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __str__(self):
        from .printer import format_program

        return format_program(self)


def _is_declaration(c) -> bool:
    return (
        type(c) is Clause
        and c.is_fact
        and type(c.head) is Struct
        and c.head.functor in DECLARATION_FUNCTORS
    )
