"""Backward-chaining interpreter with lazily sampled, memoized random variables.

A :class:`World` is one partial possible world: the table of random
variables sampled so far plus the accumulated log evidence weight.  The
:class:`Engine` proves goals against a fixed program and extends a world
whenever a proof needs the value of a random variable it has not sampled
yet.  Observed random variables are never sampled; their value is taken
from the world's evidence and the world's weight is multiplied by the
density of that value (likelihood weighting).
"""

from __future__ import annotations

import math
import sys
from collections import Counter, defaultdict
from typing import Iterator, Mapping

import numpy as np

from ..distributions import (
    Discrete,
    Distribution,
    Gaussian,
    Linear,
    Logistic,
    Softmax,
    Val,
    eval_stat_model,
    log_density,
    sample_distribution,
)
from ..errors import (
    ConflictingDefinition,
    InferenceError,
    InstantiationError,
    NonTermination,
    TypeMismatch,
)
from ..syntax.printer import format_term
from ..syntax.program import Clause, DistClause, Program, conj_to_list
from ..syntax.terms import Renamer, Struct, Var, is_ground, resolve, term_key, unify_terms, walk

AGGREGATES = frozenset({"avg", "sum", "max", "min", "mod", "count"})
_STATIC_BUILTINS = frozenset({("true", 0), ("==", 2), ("\\==", 2), ("=", 2)})
MAX_DEPTH = 600

if sys.getrecursionlimit() < 20000:
    sys.setrecursionlimit(20000)


class _Undefined:
    __slots__ = ()

    def __repr__(self):
        return "UNDEFINED"


UNDEFINED = _Undefined()
_MISSING = object()


class World:
    """A partial possible world.

    ``memo`` maps ground random variables to their value (or
    :data:`UNDEFINED` when no clause defines them in this world).  Entries
    passed as ``fixed`` act as interventions: they are never sampled and
    carry no weight.
    """

    __slots__ = ("memo", "evidence", "log_weight", "rng", "pending", "derived", "collected")

    def __init__(self, rng: np.random.Generator, evidence: Mapping | None = None, fixed: Mapping | None = None):
        self.rng = rng
        self.evidence = evidence or {}
        self.memo: dict = dict(fixed) if fixed else {}
        self.log_weight = 0.0
        self.pending: set = set()
        self.derived: set = set()
        self.collected: dict = {}

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight) if self.log_weight > -math.inf else 0.0

    def assignments(self) -> dict:
        return {k: v for k, v in self.memo.items() if v is not UNDEFINED}


def to_distribution(t) -> Distribution:
    """Interpret a ground distribution term."""
    if type(t) is not Struct:
        raise InferenceError(f"not a distribution term: {format_term(t)}")
    f, args = t.functor, t.args
    if f == "val" and len(args) == 1:
        if not is_ground(args[0]):
            raise InstantiationError(f"unbound value in {format_term(t)}")
        return Val(args[0])
    if f == "gaussian" and len(args) == 2:
        m, v = args
        if type(m) is not float or type(v) is not float:
            raise InstantiationError(f"gaussian parameters must be numbers: {format_term(t)}")
        return Gaussian(m, v)
    if f == "discrete":
        pairs = args[0] if len(args) == 1 and type(args[0]) is tuple else args
        labels, probs = [], []
        for p in pairs:
            if type(p) is not Struct or p.key != (":", 2) or type(p.args[0]) is not float:
                raise InstantiationError(f"malformed discrete entry {format_term(p)}")
            probs.append(p.args[0])
            labels.append(p.args[1])
        return Discrete(tuple(labels), tuple(probs))
    raise InferenceError(f"unknown distribution {format_term(t)}")


def _variant_key(t, mapping: dict):
    tt = type(t)
    if tt is Var:
        v = mapping.get(t)
        if v is None:
            v = mapping[t] = Var(f"${len(mapping)}")
        return v
    if tt is Struct:
        return Struct(t.functor, tuple(_variant_key(a, mapping) for a in t.args))
    if tt is tuple:
        return tuple(_variant_key(a, mapping) for a in t)
    return t


def _sort_key(v):
    return (type(v).__name__, format_term(v))


class Engine:
    """Prover for one immutable program.

    Deterministic predicates (those whose definitions never touch a random
    variable) have their answers cached, because they do not depend on the
    world being built.
    """

    def __init__(self, program: Program):
        self.program = program
        self.renamer = Renamer()
        self.clauses: dict[tuple, list] = defaultdict(list)
        self.dist_ground: dict = defaultdict(list)
        self.dist_open: dict[tuple, list] = defaultdict(list)
        for c in program.clauses:
            self.clauses[c.key].append((c.head, c.body, not c.body and is_ground(c.head)))
        for c in program.dist_clauses:
            if is_ground(c.head):
                self.dist_ground[c.head].append(c)
            else:
                self.dist_open[c.key].append(c)
        self._fact_index = self._build_index()
        self.pure = self._pure_keys()
        self._pure_cache: dict = {}
        self._defs: dict = {}
        self._prefix_cache: dict = {}
        self._variant_keys: dict = {}
        self._builtins = {
            ("true", 0): self._b_true,
            ("fail", 0): self._b_fail,
            ("false", 0): self._b_fail,
            ("~=", 2): self._b_value,
            ("==", 2): self._b_eq,
            ("\\==", 2): self._b_neq,
            ("=", 2): self._b_unify,
            ("\\+", 1): self._b_not,
            ("linear", 3): self._b_model,
            ("logistic", 3): self._b_model,
            ("softmax", 3): self._b_model,
        }
        for a in AGGREGATES:
            self._builtins[(a, 3)] = self._b_aggregate

    # -- static analysis ------------------------------------------------------

    def _build_index(self) -> dict:
        index = {}
        for key, cs in self.clauses.items():
            if key[1] == 0 or not all(ground for _, _, ground in cs):
                continue
            by_first: dict = defaultdict(list)
            for c in cs:
                by_first[c[0].args[0]].append(c)
            index[key] = by_first
        return index

    def _pure_keys(self) -> set:
        impure: set = set()

        def goal_ok(g) -> bool:
            if type(g) is str:
                return (g, 0) not in impure
            if type(g) is not Struct:
                return True
            k = g.key
            if k == ("~=", 2) or (g.functor in AGGREGATES and len(g.args) == 3):
                return False
            if k in ((",", 2), ("\\+", 1)):
                return all(goal_ok(a) for a in g.args)
            return k not in impure

        changed = True
        while changed:
            changed = False
            for key, cs in self.clauses.items():
                if key in impure:
                    continue
                if not all(goal_ok(b) for _, body, _ in cs for b in body):
                    impure.add(key)
                    changed = True
        return {k for k in self.clauses if k not in impure}

    # -- random variables -----------------------------------------------------

    def definitions(self, rv) -> list:
        """Distributional clauses for ``rv`` as ``(distribution, dist_term, body)``.

        The leading world-independent goals of each body are solved once
        here, so each entry is a residual body that still needs the world.
        ``distribution`` is precomputed when the distribution term is ground.
        """
        cached = self._defs.get(rv)
        if cached is not None:
            return cached
        out = []
        for c in self.dist_ground.get(rv, ()):
            out.extend(self._expand(c.dist, c.body))
        for c in self.dist_open.get(term_key(rv), ()):
            mapping: dict = {}
            head = self.renamer.rename(c.head, mapping)
            s = unify_terms(head, rv, {})
            if s is None:
                continue
            dist = resolve(self.renamer.rename(c.dist, mapping), s)
            body = tuple(resolve(self.renamer.rename(b, mapping), s) for b in c.body)
            out.extend(self._expand(dist, body))
        self._defs[rv] = out
        return out

    def _static(self, g) -> bool:
        if type(g) is str:
            return (g, 0) in self.pure or g == "true"
        return type(g) is Struct and (g.key in self.pure or g.key in _STATIC_BUILTINS)

    def _expand(self, dist_term, body) -> list:
        i = 0
        while i < len(body) and self._static(body[i]):
            i += 1
        if i == 0:
            return [self._definition(dist_term, body)]
        out, seen = [], set()
        for s in self.solve(body[:i], {}, World(rng=None)):
            d = resolve(dist_term, s)
            rest = tuple(resolve(b, s) for b in body[i:])
            if (d, rest) not in seen:
                seen.add((d, rest))
                out.append(self._definition(d, rest))
        return out

    @staticmethod
    def _definition(dist_term, body):
        if is_ground(dist_term):
            return (to_distribution(dist_term), dist_term, body)
        return (None, dist_term, body)

    def distribution_of(self, rv, world: World) -> Distribution | None:
        """The unique distribution of ``rv`` in ``world``, or ``None`` if undefined."""
        found = None
        for dist, dist_term, body in self.definitions(rv):
            if not body:
                candidates = (dist if dist is not None else to_distribution(dist_term),)
            elif dist is not None:
                candidates = (dist,) if self.prove(body, world) is not None else ()
            else:
                candidates = (to_distribution(resolve(dist_term, s)) for s in self.solve(body, {}, world))
            for d in candidates:
                if found is None:
                    found = d
                elif d != found:
                    raise ConflictingDefinition(
                        f"{format_term(rv)} has two distributions in one world: {found} and {d}"
                    )
        return found

    def value_of(self, rv, world: World):
        v = world.memo.get(rv, _MISSING)
        if v is not _MISSING:
            return v
        if rv in world.pending:
            raise NonTermination(f"{format_term(rv)} depends on itself")
        world.pending.add(rv)
        try:
            dist = self.distribution_of(rv, world)
        finally:
            world.pending.discard(rv)
        observed = world.evidence.get(rv, _MISSING)
        if dist is None:
            v = UNDEFINED
            if observed is not _MISSING:
                world.log_weight = -math.inf
        elif observed is not _MISSING:
            world.log_weight += log_density(dist, observed)
            v = observed
        else:
            v = sample_distribution(dist, world.rng)
        world.memo[rv] = v
        return v

    # -- resolution -----------------------------------------------------------

    def solve(self, goals: tuple, s: dict, world: World, depth: int = 0) -> Iterator[dict]:
        """Enumerate substitutions proving the conjunction ``goals`` (SLD order)."""
        if not goals:
            yield s
            return
        if depth > MAX_DEPTH:
            raise NonTermination("proof depth limit exceeded")
        goal = walk(goals[0], s)
        rest = goals[1:]
        tg = type(goal)
        if tg is Struct:
            key = (goal.functor, len(goal.args))
            if key == (",", 2):
                yield from self.solve(goal.args + rest, s, world, depth)
                return
        elif tg is str:
            key = (goal, 0)
        elif tg is Var:
            raise InstantiationError("goal is an unbound variable")
        else:
            raise InferenceError(f"cannot call {format_term(goal)}")
        builtin = self._builtins.get(key)
        step = builtin(goal, s, world, depth) if builtin else self._call(goal, key, s, world, depth)
        if not rest:
            yield from step
            return
        for s2 in step:
            yield from self.solve(rest, s2, world, depth + 1)

    def prove(self, goals, world: World, s: dict | None = None) -> dict | None:
        """First solution of ``goals`` or ``None``."""
        gen = self.solve(tuple(goals), s or {}, world)
        try:
            return next(gen, None)
        finally:
            gen.close()

    def _call(self, goal, key, s, world, depth):
        if key in self.pure:
            g = resolve(goal, s)
            answers = self._pure_answers(g, key, world, depth)
            if answers is not None:
                for inst in answers:
                    s2 = unify_terms(g, inst, s)
                    if s2 is not None:
                        yield s2
                return
        yield from self._resolve_clauses(goal, key, s, world, depth)

    def _candidates(self, goal, key, s):
        idx = self._fact_index.get(key)
        if idx is not None:
            first = walk(goal.args[0], s)
            if type(first) is not Var and is_ground(first):
                return idx.get(first, ())
        return self.clauses.get(key, ())

    def _resolve_clauses(self, goal, key, s, world, depth):
        for head, body, ground_fact in self._candidates(goal, key, s):
            if ground_fact:
                s2 = unify_terms(goal, head, s)
                if s2 is not None:
                    yield s2
                continue
            mapping: dict = {}
            s2 = unify_terms(goal, self.renamer.rename(head, mapping), s)
            if s2 is None:
                continue
            if not body:
                yield s2
                continue
            yield from self.solve(tuple(self.renamer.rename(b, mapping) for b in body), s2, world, depth + 1)

    def _pure_answers(self, g, key, world, depth):
        ck = g if is_ground(g) else _variant_key(g, {})
        hit = self._pure_cache.get(ck, _MISSING)
        if hit is not _MISSING:
            return hit
        answers = []
        for s2 in self._resolve_clauses(g, key, {}, world, depth):
            inst = resolve(g, s2)
            if not is_ground(inst):
                answers = None
                break
            answers.append(inst)
        self._pure_cache[ck] = answers
        return answers

    # -- builtins -------------------------------------------------------------

    def _b_true(self, goal, s, world, depth):
        yield s

    def _b_fail(self, goal, s, world, depth):
        return
        yield

    def _b_value(self, goal, s, world, depth):
        rv = resolve(goal.args[0], s)
        if not is_ground(rv):
            raise InstantiationError(f"random variable {format_term(rv)} is not ground")
        v = self.value_of(rv, world)
        if v is UNDEFINED:
            return
        s2 = unify_terms(goal.args[1], v, s)
        if s2 is not None:
            yield s2

    def _b_eq(self, goal, s, world, depth):
        a, b = (resolve(x, s) for x in goal.args)
        if type(a) is type(b) and a == b:
            yield s

    def _b_neq(self, goal, s, world, depth):
        a, b = (resolve(x, s) for x in goal.args)
        if not (type(a) is type(b) and a == b):
            yield s

    def _b_unify(self, goal, s, world, depth):
        s2 = unify_terms(goal.args[0], goal.args[1], s)
        if s2 is not None:
            yield s2

    def _b_not(self, goal, s, world, depth):
        gen = self.solve((goal.args[0],), s, world, depth + 1)
        try:
            found = next(gen, None) is not None
        finally:
            gen.close()
        if not found:
            yield s

    def collect(self, template, query, s, world, depth=0) -> list:
        """All bindings of ``template`` over the proofs of ``query`` (a multiset).

        Results are memoized per world: once a proof has sampled a random
        variable its value is fixed, so the multiset cannot change.
        """
        inst = (resolve(template, s), resolve(query, s))
        key = self._variant_keys.get(inst)
        if key is None:
            key = self._variant_keys[inst] = _variant_key(inst, {})
        out = world.collected.get(key)
        if out is not None:
            return out
        out = []
        for t, residual in self._static_prefix(key):
            for s2 in self.solve(residual, {}, world, depth + 1):
                v = resolve(t, s2)
                if not is_ground(v):
                    raise InstantiationError(f"aggregated value {format_term(v)} is not ground")
                out.append(v)
        world.collected[key] = out
        return out

    def _static_prefix(self, key) -> list:
        """Solve the world-independent leading goals of an aggregate query once."""
        hit = self._prefix_cache.get(key)
        if hit is not None:
            return hit
        template, query = key
        goals = tuple(conj_to_list(query))
        i = 0
        while i < len(goals) and self._static(goals[i]):
            i += 1
        if i == 0:
            hit = [(template, goals)]
        else:
            hit = [
                (resolve(template, s), tuple(resolve(g, s) for g in goals[i:]))
                for s in self.solve(goals[:i], {}, World(rng=None))
            ]
        self._prefix_cache[key] = hit
        return hit

    def _b_aggregate(self, goal, s, world, depth):
        template, query, result = goal.args
        values = self.collect(template, query, s, world, depth)
        if not values:
            return
        r = aggregate(goal.functor, values)
        s2 = unify_terms(result, r, s)
        if s2 is not None:
            yield s2

    def _b_model(self, goal, s, world, depth):
        ys, ws, out = goal.args
        ys = resolve(ys, s)
        ws = resolve(ws, s)
        if not (is_ground(ys) and is_ground(ws)) or type(ys) is not tuple:
            raise InstantiationError(f"{goal.functor} needs ground inputs and weights")
        if any(type(y) is not float for y in ys):
            raise TypeMismatch(f"{goal.functor} inputs must be numbers: {format_term(ys)}")
        if goal.functor == "linear":
            params = eval_stat_model(Linear(ws), ys)
            value = params[0]
        elif goal.functor == "logistic":
            value = tuple(eval_stat_model(Logistic(ws), ys))
        else:
            value = tuple(eval_stat_model(Softmax(ws), ys))
        s2 = unify_terms(out, value, s)
        if s2 is not None:
            yield s2


def aggregate(name: str, values: list):
    """Combine a nonempty multiset of values."""
    if name == "count":
        return float(len(values))
    if name == "mod":
        counts = Counter(values)
        top = max(counts.values())
        return min((v for v, c in counts.items() if c == top), key=_sort_key)
    if any(type(v) is not float for v in values):
        raise TypeMismatch(f"{name} over non-numeric values {values!r}")
    if name == "avg":
        return math.fsum(values) / len(values)
    if name == "sum":
        return math.fsum(values)
    if name == "max":
        return max(values)
    if name == "min":
        return min(values)
    raise InferenceError(f"unknown aggregate {name}")
