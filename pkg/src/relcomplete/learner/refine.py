"""Bias-conform refinement literals for distributional logic trees.

A refinement adds one test literal to a clause body.  It either reads an
attribute of the head entity directly (``b(T) ~= V``) or aggregates an
attribute over entities reached through link relations
(``agg(X, (r(T,A), b(A) ~= X), R)``).  Its outcome for one entity in one
world is a label, a real number, or failure.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..relational import AGGREGATORS, BiasSpec, ModeDecl, mode_bindings
from ..syntax.printer import format_term
from ..syntax.program import list_to_conj
from ..syntax.terms import Struct, Var, struct

NUMERIC_AGGREGATES = frozenset({"avg", "sum", "max", "min"})


@dataclass(frozen=True)
class Refinement:
    """One test literal, described independently of variable names.

    ``wiring`` gives, per literal of the mode pattern, the variable numbers
    of its arguments (0 is the head entity variable).
    """

    mode: ModeDecl
    wiring: tuple
    continuous: bool  # the outcome is a real number
    domain: tuple = ()  # labels when the outcome is discrete

    @property
    def attribute(self) -> str:
        return self.mode.attribute.functor

    @property
    def aggregator(self) -> str:
        return self.mode.aggregator

    @property
    def signature(self) -> tuple:
        return (self.mode, self.wiring)

    def literal(self, head: Var, tag: str = "1") -> tuple:
        """``(goal, out)``: the test goal and the variable holding its value."""
        if self.aggregator == "none":
            out = Var(f"V{tag}")
            return struct("~=", struct(self.attribute, head), out), out
        local = {0: head}

        def var(i):
            if i not in local:
                local[i] = Var(f"A{tag}_{len(local)}")
            return local[i]

        goals = [Struct(lit.functor, tuple(var(i) for i in args)) for lit, args in zip(self.mode.links, self.wiring)]
        x = Var(f"X{tag}")
        goals.append(struct("~=", struct(self.attribute, var(self.wiring[-1][0])), x))
        out = Var(f"R{tag}")
        return struct(self.aggregator, x, list_to_conj(goals), out), out

    def negated(self, head: Var, tag: str = "1"):
        """Goal that succeeds exactly when the test fails."""
        goal, _ = self.literal(head, tag)
        if self.aggregator == "none":
            goal = struct("~=", goal.args[0], Var("_"))
        else:
            goal = struct(goal.functor, goal.args[0], goal.args[1], Var("_"))
        return struct("\\+", goal)

    def __str__(self):
        goal, _ = self.literal(Var("T"))
        return format_term(goal)


def _result_kind(m: ModeDecl, bias: BiasSpec):
    """``(continuous, domain)`` of the test outcome, or ``None`` if ill-typed."""
    decl = bias.rands[m.attribute.functor]
    if m.aggregator == "none" or m.aggregator == "mod":
        return decl.continuous, () if decl.continuous else tuple(decl.domain)
    if m.aggregator == "count":
        return True, ()
    if m.aggregator in NUMERIC_AGGREGATES:
        return (True, ()) if decl.continuous else None
    return None


def rank_allows(target: str, attribute: str, rank) -> bool:
    """Whether ``target`` may read ``attribute`` (listed strictly earlier)."""
    if not rank:
        return True
    if target not in rank or attribute not in rank:
        return False
    return rank.index(attribute) < rank.index(target)


def refinements(target: str, bias: BiasSpec, path=(), rank=None) -> list:
    """All mode- and type-conform refinements for ``target`` not yet on ``path``.

    ``path`` holds refinements already used on the branch.  When ``rank``
    is given only attributes ranked strictly below ``target`` are read.
    Tests on the target attribute itself are never generated.
    """
    used = {r.signature for r in path}
    out = []
    for m in bias.modes_for(target):
        if m.attribute.functor == target or m.aggregator not in ("none", *AGGREGATORS):
            continue
        if not rank_allows(target, m.attribute.functor, rank):
            continue
        kind = _result_kind(m, bias)
        if kind is None:
            continue
        for wiring in mode_bindings(m, bias):
            r = Refinement(m, tuple(wiring), kind[0], kind[1])
            if r.signature not in used:
                out.append(r)
    return out
