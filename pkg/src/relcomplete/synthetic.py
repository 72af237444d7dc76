"""Synthetic relational databases drawn from a known joint model program.

The bank schema has clients, accounts and loans linked tree-wise: every
account belongs to one client and every loan to one account.  Attribute
cells are sampled from a generating program; cells the program leaves
undefined become missing cells.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .engine.core import UNDEFINED, Engine, World
from .relational import (
    MISSING,
    OBSERVED,
    Cell,
    CellRef,
    EntityTable,
    LinkTable,
    TableBundle,
    TableSchema,
    parse_bias,
    parse_schema,
)
from .syntax.parser import parse_program
from .syntax.program import Clause, Program
from .syntax.terms import struct

BANK_SCHEMA = """
entity(client, cliId, [age, creditScore]).
entity(account, accId, [savings, freq]).
entity(loan, loanId, [loanAmt, status]).
link(hasAcc, [cliId:client, accId:account]).
link(hasLoan, [accId:account, loanId:loan]).
rand(age, continuous, []).
rand(creditScore, continuous, []).
rand(savings, continuous, []).
rand(freq, discrete, [low, high]).
rand(loanAmt, continuous, []).
rand(status, discrete, [appr, pend, decl]).
"""

BANK_BIAS = """
type(client(c)).  type(account(a)).  type(loan(l)).
type(hasAcc(c,a)).  type(hasLoan(a,l)).
type(age(c)).  type(creditScore(c)).  type(savings(a)).
type(freq(a)).  type(loanAmt(l)).  type(status(l)).

rand(age, continuous, []).
rand(creditScore, continuous, []).
rand(savings, continuous, []).
rand(freq, discrete, [low, high]).
rand(loanAmt, continuous, []).
rand(status, discrete, [appr, pend, decl]).

rank([freq, savings, creditScore, age, loanAmt, status]).

mode(savings, none, freq(+)).
mode(creditScore, mod, (hasAcc(+,-), freq(+))).
mode(creditScore, max, (hasAcc(+,-), savings(+))).
mode(creditScore, avg, (hasAcc(+,-), savings(+))).
mode(age, avg, (hasAcc(+,-), savings(+))).
mode(age, none, creditScore(+)).
mode(age, mod, (hasAcc(+,-), freq(+))).
mode(loanAmt, avg, (hasLoan(-,+), savings(+))).
mode(loanAmt, mod, (hasLoan(-,+), freq(+))).
mode(status, none, loanAmt(+)).
mode(status, avg, (hasLoan(-,+), hasAcc(-,+), creditScore(+))).
"""

# the joint model program of the bank example, without its facts
BANK_MODEL = """
freq(A) ~ discrete([0.2:low,0.8:high]) := account(A).
savings(A) ~ gaussian(2002,10.2) := account(A), freq(A)~=X, X==low.
savings(A) ~ gaussian(3030,11.3) := account(A), freq(A)~=X, X==high.
age(C) ~ gaussian(Mean,3) := client(C), avg(X,(hasAcc(C,A), savings(A)~=X), Y), creditScore(C)~=Z, linear([Y,Z],[30,0.2,-0.4],Mean).
loanAmt(L) ~ gaussian(Mean,10) := loan(L), avg(X,(hasLoan(A,L), savings(A)~=X),Y), linear([Y],[100.1, 10],Mean).
loanAmt(L) ~ gaussian(25472.3,10.2) := loan(L), \\+avg(X,(hasLoan(A,L),savings(A)~=X),Y).
status(L) ~ discrete([P1:appr, P2:pend, P3:decl]) := loan(L), avg(X, (hasLoan(A,L),hasAcc(C,A),creditScore(C)~=X),Y), loanAmt(L)~=Z, softmax([Y,Z],[[0.1,-0.3,-2.4],[0.3,0.4,0.2],[0.8,1.9,-2.9]],[P1,P2,P3]).
creditScore(C) ~ gaussian(300,10.1) := client(C), mod(X,(hasAcc(C,A), freq(A)~=X),Z), Z==low.
creditScore(C) ~ gaussian(Mean,15.3) := client(C), mod(X,(hasAcc(C,A), freq(A)~=X),Z), Z==high, max(X,(hasAcc(C,A), savings(A)~=X), Y), linear([Y],[600,0.2],Mean).
creditScore(C) ~ gaussian(Mean,12.3) := client(C), \\+mod(X,(hasAcc(C,A), freq(A)~=X),Z), max(X,(hasAcc(C,A), savings(A)~=X), Y), linear([Y],[500,0.8],Mean).
"""


def bank_schema() -> TableSchema:
    return parse_schema(BANK_SCHEMA)


def bank_bias():
    return parse_bias(BANK_BIAS)


def bank_skeleton(
    n_clients: int, n_accounts: int, n_loans: int, rng: np.random.Generator, prefix: str = ""
) -> TableBundle:
    """Entities and links with every cell missing.

    The first ``min(n_clients, n_accounts)`` accounts are spread one per
    client so that every client owns an account; the remaining accounts
    and all loans are attached to uniformly drawn owners.
    """
    schema = bank_schema()
    clients = [f"{prefix}c_{i}" for i in range(n_clients)]
    accounts = [f"{prefix}a_{i}" for i in range(n_accounts)]
    loans = [f"{prefix}l_{i}" for i in range(n_loans)]
    owner = list(rng.permutation(n_clients)[: min(n_clients, n_accounts)])
    owner += list(rng.integers(0, n_clients, size=n_accounts - len(owner)))
    has_acc = tuple((clients[int(o)], a) for o, a in zip(owner, accounts))
    has_loan = tuple((accounts[int(rng.integers(0, n_accounts))], l) for l in loans)

    def table(e, keys):
        es = schema.entity(e)
        return EntityTable(e, es.key, es.attributes, tuple((k, {a: Cell(MISSING) for a in es.attributes}) for k in keys))

    entities = (table("client", clients), table("account", accounts), table("loan", loans))
    links = (
        LinkTable("hasAcc", ("cliId", "accId"), has_acc),
        LinkTable("hasLoan", ("accId", "loanId"), has_loan),
    )
    return TableBundle(schema, entities, links)


def skeleton_facts(b: TableBundle) -> list:
    facts = [Clause(struct(t.name, k)) for t in b.entities for k, _ in t.rows]
    facts += [Clause(struct(l.name, *row)) for l in b.links for row in l.rows]
    return facts


def sample_bundle(model: Program | str, skeleton: TableBundle, rng: np.random.Generator) -> TableBundle:
    """Fill every attribute cell of ``skeleton`` with a draw from ``model``."""
    if isinstance(model, str):
        model = parse_program(model)
    program = Program(tuple(skeleton_facts(skeleton)) + tuple(model.items), "<generator>")
    eng = Engine(program)
    world = World(rng)
    updates = {}
    for ref, _ in skeleton.cells():
        v = eng.value_of(ref.rv, world)
        updates[ref] = Cell(MISSING) if v is UNDEFINED else Cell(OBSERVED, v)
    return skeleton.with_cells(updates)


def mask_mcar(
    b: TableBundle, fraction: float, rng: np.random.Generator, attributes: Sequence[str] | None = None
) -> tuple[TableBundle, list]:
    """Hide each observed cell (of the chosen attributes) with probability ``fraction``."""
    updates, hidden = {}, []
    for ref, c in b.cells():
        if c.status != OBSERVED or (attributes is not None and ref.attribute not in attributes):
            continue
        if rng.random() < fraction:
            updates[ref] = Cell(MISSING)
            hidden.append(ref)
    return b.with_cells(updates), hidden


def observed_values(b: TableBundle) -> dict:
    """``CellRef -> value`` for every observed cell."""
    return {ref: c.value for ref, c in b.cells() if c.status == OBSERVED}


def bank_data(n: int, seed: int, prefix: str = "") -> TableBundle:
    rng = np.random.default_rng(seed)
    return sample_bundle(BANK_MODEL, bank_skeleton(n, n, n, rng, prefix), rng)


__all__ = [
    "BANK_BIAS",
    "BANK_SCHEMA",
    "BANK_MODEL",
    "CellRef",
    "bank_bias",
    "bank_schema",
    "bank_skeleton",
    "bank_data",
    "mask_mcar",
    "observed_values",
    "sample_bundle",
    "skeleton_facts",
]
