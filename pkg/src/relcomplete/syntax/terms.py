"""Terms, substitutions and unification.

Constants are plain Python values: ``str`` for symbols and ``float`` for
numbers.  Lists are tuples.  Variables and compound terms get their own
small classes so that hashing and equality stay cheap in the prover's
inner loop.
"""

from __future__ import annotations

from typing import Iterator, Mapping, Union

Term = Union["Var", "Struct", str, float, tuple]
Substitution = dict


class Var:
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def __eq__(self, other):
        return type(other) is Var and other.name == self.name

    def __hash__(self):
        return hash(("$VAR", self.name))

    def __repr__(self):
        return self.name


class Struct:
    """Compound term ``functor(args...)``. Immutable."""

    __slots__ = ("functor", "args", "_hash")

    def __init__(self, functor: str, args: tuple):
        self.functor = functor
        self.args = args
        self._hash = hash((functor, args))

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def key(self) -> tuple[str, int]:
        return (self.functor, len(self.args))

    def __eq__(self, other):
        return (
            type(other) is Struct
            and other._hash == self._hash
            and other.functor == self.functor
            and other.args == self.args
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        from .printer import format_term

        return format_term(self)


def struct(functor: str, *args) -> Struct:
    return Struct(functor, tuple(args))


def term_key(t) -> tuple[str, int]:
    """Predicate indicator of an atom-like term."""
    if type(t) is Struct:
        return (t.functor, len(t.args))
    if type(t) is str:
        return (t, 0)
    raise TypeError(f"not an atom: {t!r}")


def is_number(t) -> bool:
    return type(t) is float


# ---------------------------------------------------------------------------
# traversal


def walk(t, s: Mapping):
    while type(t) is Var:
        nxt = s.get(t)
        if nxt is None:
            return t
        t = nxt
    return t


def resolve(t, s: Mapping):
    """Fully dereference ``t`` under the triangular substitution ``s``."""
    if not s:
        return t
    t = walk(t, s)
    tt = type(t)
    if tt is Struct:
        args = tuple(resolve(a, s) for a in t.args)
        if all(x is y for x, y in zip(args, t.args)):
            return t
        return Struct(t.functor, args)
    if tt is tuple:
        out = tuple(resolve(a, s) for a in t)
        return t if all(x is y for x, y in zip(out, t)) else out
    return t


def apply_substitution(e, theta: Mapping):
    """Replace every bound variable of ``e`` in one simultaneous pass.

    Works for terms and for clause objects (anything with a ``substitute``
    method).  Unlike :func:`resolve`, bindings are not chased: applying
    ``{X/a, Y/g(X)}`` to ``f(X, Y)`` gives ``f(a, g(X))``.
    """
    if hasattr(e, "substitute"):
        return e.substitute(theta)
    te = type(e)
    if te is Var:
        return theta.get(e, e)
    if te is Struct:
        return Struct(e.functor, tuple(apply_substitution(a, theta) for a in e.args))
    if te is tuple:
        return tuple(apply_substitution(a, theta) for a in e)
    return e


def variables(t) -> Iterator[Var]:
    """Variables of ``t`` in left-to-right order of first occurrence (with repeats)."""
    tt = type(t)
    if tt is Var:
        yield t
    elif tt is Struct:
        for a in t.args:
            yield from variables(a)
    elif tt is tuple:
        for a in t:
            yield from variables(a)


def is_ground(t) -> bool:
    tt = type(t)
    if tt is Var:
        return False
    if tt is Struct:
        return all(is_ground(a) for a in t.args)
    if tt is tuple:
        return all(is_ground(a) for a in t)
    return True


# ---------------------------------------------------------------------------
# unification


def _occurs(v: Var, t, s) -> bool:
    t = walk(t, s)
    tt = type(t)
    if tt is Var:
        return t == v
    if tt is Struct:
        return any(_occurs(v, a, s) for a in t.args)
    if tt is tuple:
        return any(_occurs(v, a, s) for a in t)
    return False


def _const_eq(x, y) -> bool:
    # 1.0 == 1.0 but the symbol 'a' never equals a number
    return type(x) is type(y) and x == y


def unify_terms(x, y, s: dict) -> dict | None:
    """Extend ``s`` so that ``x`` and ``y`` become equal; ``None`` on failure.

    The input mapping is never mutated.  When both sides are unbound
    variables the right-hand one is bound to the left-hand one.
    """
    x = walk(x, s)
    y = walk(y, s)
    if x is y:
        return s
    tx, ty = type(x), type(y)
    if ty is Var:
        if tx is Var and x == y:
            return s
        if _occurs(y, x, s):
            return None
        s2 = dict(s)
        s2[y] = x
        return s2
    if tx is Var:
        if _occurs(x, y, s):
            return None
        s2 = dict(s)
        s2[x] = y
        return s2
    if tx is Struct:
        if ty is not Struct or x.functor != y.functor or len(x.args) != len(y.args):
            return None
        for a, b in zip(x.args, y.args):
            s = unify_terms(a, b, s)
            if s is None:
                return None
        return s
    if tx is tuple:
        if ty is not tuple or len(x) != len(y):
            return None
        for a, b in zip(x, y):
            s = unify_terms(a, b, s)
            if s is None:
                return None
        return s
    return s if _const_eq(x, y) else None


def unify(a, b) -> dict | None:
    """Most general unifier of two atoms (or terms), in solved form.

    Returns ``None`` when the terms do not unify.  The returned mapping is
    idempotent, so ``apply_substitution`` makes both sides identical.
    """
    s = unify_terms(a, b, {})
    if s is None:
        return None
    return {v: resolve(v, s) for v in s}


class Renamer:
    """Produces clause-local variable copies with globally fresh names."""

    __slots__ = ("_counter",)

    def __init__(self):
        self._counter = 0

    def fresh(self, name: str = "_") -> Var:
        self._counter += 1
        return Var(f"{name}#{self._counter}")

    def rename(self, t, mapping: dict):
        tt = type(t)
        if tt is Var:
            v = mapping.get(t)
            if v is None:
                v = mapping[t] = self.fresh(t.name)
            return v
        if tt is Struct:
            return Struct(t.functor, tuple(self.rename(a, mapping) for a in t.args))
        if tt is tuple:
            return tuple(self.rename(a, mapping) for a in t)
        return t
