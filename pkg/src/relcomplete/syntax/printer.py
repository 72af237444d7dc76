"""Canonical text rendering of terms, clauses and programs."""

from __future__ import annotations

import re

from .terms import Struct, Var

_BARE_ATOM = re.compile(r"[a-z][A-Za-z0-9_]*\Z")
_SYMBOL_ATOM = re.compile(r"[+\-*/\\^<>=~:.?@#&$]+\Z")

# operator -> (priority, type)
INFIX = {
    ":=": (1200, "xfx"),
    ":-": (1200, "xfx"),
    ",": (1000, "xfy"),
    "~": (700, "xfx"),
    "~=": (700, "xfx"),
    "==": (700, "xfx"),
    "\\==": (700, "xfx"),
    "=": (700, "xfx"),
    ":": (200, "xfy"),
}
PREFIX = {"\\+": (900, "fy")}


def format_number(x: float) -> str:
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError(f"cannot serialise {x!r}")
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def format_atom(a: str) -> str:
    if _BARE_ATOM.match(a) or _SYMBOL_ATOM.match(a) or a == "[]":
        return a
    escaped = a.replace("\\", "\\\\").replace("'", "\\'")
    return f"'{escaped}'"


def format_term(t, prio: int = 1200) -> str:
    tt = type(t)
    if tt is Var:
        return t.name
    if tt is float:
        return format_number(t)
    if tt is int:
        return format_number(float(t))
    if tt is str:
        return format_atom(t)
    if tt is tuple:
        return "[" + ",".join(format_term(a, 999) for a in t) + "]"
    if tt is Struct:
        f, args = t.functor, t.args
        if len(args) == 2 and f in INFIX:
            p, kind = INFIX[f]
            lp = p - 1 if kind[0] == "x" else p
            rp = p - 1 if kind[2] == "x" else p
            if f == ",":
                s = f"{format_term(args[0], lp)}, {format_term(args[1], rp)}"
            elif f == ":":
                s = f"{format_term(args[0], lp)}:{format_term(args[1], rp)}"
            else:
                s = f"{format_term(args[0], lp)} {f} {format_term(args[1], rp)}"
            return f"({s})" if p > prio else s
        if len(args) == 1 and f in PREFIX:
            p, _ = PREFIX[f]
            s = f"{f} {format_term(args[0], p)}"
            return f"({s})" if p > prio else s
        inner = ",".join(format_term(a, 999) for a in args)
        return f"{format_atom(f)}({inner})"
    raise TypeError(f"cannot format {t!r}")


def format_body(body) -> str:
    return ", ".join(format_term(b, 999) for b in body)


def format_clause(c) -> str:
    from .program import DistClause

    if type(c) is DistClause:
        head = f"{format_term(c.head, 699)} ~ {format_term(c.dist, 699)}"
    else:
        head = format_term(c.head, 1199)
    if c.body:
        return f"{head} := {format_body(c.body)}."
    return f"{head}."


def format_program(p) -> str:
    return "".join(format_clause(c) + "\n" for c in p.items)
