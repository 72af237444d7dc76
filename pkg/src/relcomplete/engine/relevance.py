"""Ground dependency graph and Bayes-ball requisite-evidence selection.

The graph has one node per ground random variable.  A distributional
clause ``h ~ D := body`` adds an edge ``b -> h`` for every random variable
``b`` read in the body (directly, inside an aggregate, or under negation)
for each way of satisfying the body's relational atoms.  Values of random
variables are never consulted, so the edge set covers every context.
"""

from __future__ import annotations

from collections import defaultdict, deque
from typing import Iterable, Mapping

from ..errors import InstantiationError
from ..syntax.printer import format_term
from ..syntax.program import Program
from ..syntax.terms import Struct, is_ground, resolve, unify_terms, walk
from .core import AGGREGATES, Engine, World

_SKIPPED = {("==", 2), ("\\==", 2), ("=", 2), ("true", 0), ("linear", 3), ("logistic", 3), ("softmax", 3)}


class DependencyGraph:
    def __init__(self):
        self.parents: dict = defaultdict(set)
        self.children: dict = defaultdict(set)
        self.nodes: set = set()

    def add_node(self, n):
        self.nodes.add(n)

    def add_edge(self, parent, child):
        self.nodes.add(parent)
        self.nodes.add(child)
        self.parents[child].add(parent)
        self.children[parent].add(child)

    def ancestors(self, roots: Iterable) -> set:
        seen, stack = set(), list(roots)
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(self.parents.get(n, ()))
        return seen

    def components(self) -> list[set]:
        """Weakly connected components."""
        seen, out = set(), []
        for start in sorted(self.nodes, key=format_term):
            if start in seen:
                continue
            comp, stack = set(), [start]
            while stack:
                n = stack.pop()
                if n in comp:
                    continue
                comp.add(n)
                stack.extend(self.parents.get(n, ()))
                stack.extend(self.children.get(n, ()))
            seen |= comp
            out.append(comp)
        return out


class _Skeleton:
    """Solves clause bodies relationally, recording the random variables read."""

    def __init__(self, eng: Engine):
        self.eng = eng
        self.world = World(rng=None)

    def solve(self, goals: tuple, s: dict, reads: list):
        if not goals:
            yield s, reads
            return
        g = walk(goals[0], s)
        rest = goals[1:]
        if type(g) is Struct and g.key == (",", 2):
            yield from self.solve(g.args + rest, s, reads)
            return
        key = g.key if type(g) is Struct else (g, 0)
        if key in _SKIPPED:
            yield from self.solve(rest, s, reads)
            return
        if key == ("~=", 2):
            rv = resolve(g.args[0], s)
            if not is_ground(rv):
                raise InstantiationError(f"random variable {format_term(rv)} is not ground")
            yield from self.solve(rest, s, reads + [rv])
            return
        if key == ("\\+", 1) or (type(g) is Struct and g.functor in AGGREGATES and len(g.args) == 3):
            inner = g.args[0] if key == ("\\+", 1) else g.args[1]
            extra = []
            for _, r in self.solve((inner,), s, []):
                extra.extend(r)
            yield from self.solve(rest, s, reads + extra)
            return
        if key in self.eng.pure:
            for s2 in self.eng._call(g, key, s, self.world, 0):
                yield from self.solve(rest, s2, reads)
            return
        for head, body, _ in self.eng.clauses.get(key, ()):
            mapping: dict = {}
            s2 = unify_terms(g, self.eng.renamer.rename(head, mapping), s)
            if s2 is None:
                continue
            renamed = tuple(self.eng.renamer.rename(b, mapping) for b in body)
            for s3, r in self.solve(renamed, s2, reads):
                yield from self.solve(rest, s3, r)


def dependency_graph(p: Program | Engine) -> DependencyGraph:
    """Ground dependency graph of every random variable the program defines."""
    eng = p if isinstance(p, Engine) else Engine(p)
    cached = getattr(eng, "_dependency_graph", None)
    if cached is not None:
        return cached
    g = DependencyGraph()
    sk = _Skeleton(eng)
    for c in eng.program.dist_clauses:
        if not c.body:
            if is_ground(c.head):
                g.add_node(c.head)
            continue
        for s, reads in sk.solve(c.body, {}, []):
            head = resolve(c.head, s)
            if not is_ground(head):
                raise InstantiationError(f"head {format_term(head)} is not ground after its body")
            g.add_node(head)
            for r in reads:
                if r != head:
                    g.add_edge(r, head)
    eng._dependency_graph = g
    return g


def bayes_ball(graph: DependencyGraph, query: Iterable, observed: set) -> tuple[set, set, set]:
    """Bayes-ball marking from the query nodes.

    Returns ``(visited, top, bottom)``.  Observed nodes that are visited
    are the requisite observations.
    """
    visited, top, bottom = set(), set(), set()
    queue = deque((q, True) for q in query)  # (node, arrived from a child)
    while queue:
        j, from_child = queue.popleft()
        visited.add(j)
        if from_child and j not in observed:
            if j not in top:
                top.add(j)
                queue.extend((p, True) for p in graph.parents.get(j, ()))
            if j not in bottom:
                bottom.add(j)
                queue.extend((c, False) for c in graph.children.get(j, ()))
        elif not from_child:
            if j in observed:
                if j not in top:
                    top.add(j)
                    queue.extend((p, True) for p in graph.parents.get(j, ()))
            elif j not in bottom:
                bottom.add(j)
                queue.extend((c, False) for c in graph.children.get(j, ()))
    return visited, top, bottom


def relevant_evidence(query_rv, evidence: Mapping, p: Program | Engine) -> dict:
    """Subset of ``evidence`` needed to answer a query about ``query_rv``."""
    if not evidence:
        return {}
    graph = dependency_graph(p)
    observed = {k for k in evidence if k != query_rv}
    sub = _ancestral_subgraph(p, graph, frozenset(observed | {query_rv}))
    visited, _, _ = bayes_ball(sub, [query_rv], observed)
    return {k: v for k, v in evidence.items() if k in observed and k in visited}


def requisite_evidence(query_rv, evidence: Mapping, p: Program | Engine) -> tuple[dict, dict]:
    """Split the requisite observations into ``(weighted, fixed)``.

    Observations marked on top by the ball need their own probability and
    are weighted.  The others only condition their children: their values
    can be clamped without weight, which leaves the query's distribution
    unchanged and avoids sampling their ancestors.
    """
    if not evidence:
        return {}, {}
    graph = dependency_graph(p)
    observed = {k for k in evidence if k != query_rv}
    sub = _ancestral_subgraph(p, graph, frozenset(observed | {query_rv}))
    visited, top, _ = bayes_ball(sub, [query_rv], observed)
    weighted, fixed = {}, {}
    for k, v in evidence.items():
        if k in observed and k in visited:
            (weighted if k in top else fixed)[k] = v
    return weighted, fixed


def _ancestral_subgraph(p, graph: DependencyGraph, roots: frozenset) -> DependencyGraph:
    """Graph restricted to the ancestors of ``roots``; cached per engine.

    Scoring every cell of a fully observed database asks for the same root
    set each time, so the cache turns a per-cell graph walk into a lookup.
    """
    cache = getattr(p, "_ancestral_cache", None) if isinstance(p, Engine) else None
    if cache is not None and roots in cache:
        return cache[roots]
    keep = graph.ancestors(roots)
    sub = DependencyGraph()
    for n in keep:
        sub.add_node(n)
        for par in graph.parents.get(n, ()):
            if par in keep:
                sub.add_edge(par, n)
    if isinstance(p, Engine):
        if cache is None:
            cache = p._ancestral_cache = {}
        if len(cache) > 8:
            cache.clear()
        cache[roots] = sub
    return sub
