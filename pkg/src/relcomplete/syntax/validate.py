"""Static validity checks for distributional programs.

Three properties are checked without running the program:

* every attribute defined by a distributional clause is covered by the
  declared rank (when a ``rank/1`` declaration is present);
* stratification: attributes read in a distributional clause body come
  strictly before the head attribute in rank, and no dependency cycle runs
  through a distributional clause;
* no two distributional clauses with unifiable heads have identical bodies.

Full mutual exclusiveness is undecidable in general and is enforced at run
time by the inference engine instead.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from ..errors import DuplicateDefinitionError, MissingRankError, StratificationError, ValidityError
from .program import DistClause, Program
from .terms import Renamer, Struct, Var, is_ground, resolve, unify_terms

AGGREGATES = ("avg", "sum", "max", "min", "mod", "count")
_NON_PREDICATES = {
    ("==", 2), ("\\==", 2), ("=", 2), ("true", 0),
    ("linear", 3), ("logistic", 3), ("softmax", 3),
}


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    code: str
    message: str
    line: int = 0
    col: int = 0
    source: str = "<string>"

    def __str__(self):
        return f"{self.source}:{self.line}:{self.col}: {self.severity}: {self.message}"

    @property
    def error_class(self) -> type[ValidityError]:
        return {
            "stratification": StratificationError,
            "missing-rank": MissingRankError,
            "duplicate-definition": DuplicateDefinitionError,
        }[self.code]


def body_dependencies(goals) -> tuple[list, list]:
    """Random-variable keys and relational predicate keys read by ``goals``."""
    rvs, preds = [], []

    def visit(g):
        if type(g) is str:
            if (g, 0) not in _NON_PREDICATES:
                preds.append((g, 0))
            return
        if type(g) is not Struct:
            return
        k = g.key
        if k == (",", 2):
            visit(g.args[0])
            visit(g.args[1])
        elif k == ("\\+", 1):
            visit(g.args[0])
        elif k == ("~=", 2):
            rv = g.args[0]
            if type(rv) is Struct:
                rvs.append(rv.key)
            elif type(rv) is str:
                rvs.append((rv, 0))
        elif g.functor in AGGREGATES and len(g.args) == 3:
            visit(g.args[1])
        elif k not in _NON_PREDICATES:
            preds.append(k)

    for g in goals:
        visit(g)
    return rvs, preds


def _strongly_connected(nodes, edges):
    index, low, on_stack, stack, out = {}, {}, set(), [], []
    counter = [0]

    def strong(v):
        # iterative Tarjan to avoid recursion limits on long chains
        work = [(v, iter(edges.get(v, ())))]
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        while work:
            node, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(edges.get(w, ()))))
                    advanced = True
                    break
                if w in on_stack:
                    low[node] = min(low[node], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[node])
            if low[node] == index[node]:
                comp = set()
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.add(w)
                    if w == node:
                        break
                out.append(comp)

    for v in nodes:
        if v not in index:
            strong(v)
    return out


def _variant_key(goals) -> str:
    """String that is equal for two goal lists iff they are variants."""
    mapping: dict = {}

    def canon(t):
        tt = type(t)
        if tt is Var:
            v = mapping.get(t)
            if v is None:
                v = mapping[t] = Var(f"V{len(mapping)}")
            return v
        if tt is Struct:
            return Struct(t.functor, tuple(canon(a) for a in t.args))
        if tt is tuple:
            return tuple(canon(a) for a in t)
        return t

    return repr(tuple(canon(g) for g in goals))


def validate_program(p: Program, strict: bool = False) -> list[Diagnostic]:
    """Return the list of static validity diagnostics for ``p``.

    With ``strict=True`` the first diagnostic is raised as its exception
    class (:class:`StratificationError`, :class:`MissingRankError` or
    :class:`DuplicateDefinitionError`).
    """
    diags: list[Diagnostic] = []
    src = p.source

    def add(code, msg, clause):
        line, col = clause.pos or (0, 0)
        diags.append(Diagnostic("error", code, msg, line, col, src))

    dist = p.dist_clauses
    rules = p.rules

    # attributes read (transitively) through definite clauses
    reads: dict[tuple, set] = defaultdict(set)
    rule_preds: dict[tuple, set] = defaultdict(set)
    for r in rules:
        rvs, preds = body_dependencies(r.body)
        reads[r.key].update(k[0] for k in rvs)
        rule_preds[r.key].update(preds)
    changed = True
    while changed:
        changed = False
        for k, preds in rule_preds.items():
            for q in preds:
                extra = reads.get(q, set()) - reads[k]
                if extra:
                    reads[k] |= extra
                    changed = True

    def attrs_read(body):
        rvs, preds = body_dependencies(body)
        out = {k[0] for k in rvs}
        for q in preds:
            out |= reads.get(q, set())
        return out

    # --- declared rank --------------------------------------------------------
    rank = p.rank
    if rank is not None:
        pos = {a: i for i, a in enumerate(rank)}
        reported = set()
        for c in dist:
            if c.attribute not in pos and c.attribute not in reported:
                reported.add(c.attribute)
                add("missing-rank", f"attribute {c.attribute} has no rank", c)
        for c in dist:
            h = c.attribute
            if h not in pos:
                continue
            for b in sorted(attrs_read(c.body)):
                if b not in pos:
                    if b not in reported:
                        reported.add(b)
                        add("missing-rank", f"attribute {b} has no rank", c)
                elif pos[b] >= pos[h]:
                    add(
                        "stratification",
                        f"{h} depends on {b} but {b} is not ranked before {h}",
                        c,
                    )

    # --- dependency cycles through distributional clauses --------------------
    edges: dict[str, set] = defaultdict(set)
    strict_edges: set[tuple] = set()
    first_clause = {}
    for c in dist:
        rvs, preds = body_dependencies(c.body)
        for b in {k[0] for k in rvs} | {k[0] for k in preds}:
            edges[b].add(c.attribute)
            strict_edges.add((b, c.attribute))
            first_clause.setdefault((b, c.attribute), c)
    for r in rules:
        rvs, preds = body_dependencies(r.body)
        for b in {k[0] for k in rvs} | {k[0] for k in preds}:
            edges[b].add(r.key[0])
    nodes = set(edges) | {w for ws in edges.values() for w in ws}
    for comp in _strongly_connected(sorted(nodes), edges):
        bad = [(a, b) for (a, b) in strict_edges if a in comp and b in comp]
        if bad:
            a, b = sorted(bad)[0]
            msg = f"cyclic dependency through distributional clause: {a} -> {b}"
            if rank is None or not any(d.code == "stratification" for d in diags):
                add("stratification", msg, first_clause[(a, b)])

    # --- duplicate definitions ----------------------------------------------
    groups: dict[tuple, list] = defaultdict(list)
    for c in dist:
        groups[(c.key, len(c.body))].append(c)
    renamer = Renamer()
    for (key, _), cs in groups.items():
        ground_seen: dict = {}
        open_heads = []
        for c in cs:
            if is_ground(c.head):
                body_key = _variant_key(c.body)
                prev = ground_seen.get((c.head, body_key))
                if prev is not None:
                    add("duplicate-definition", f"{c.head!r} is defined twice with the same body", c)
                else:
                    ground_seen[(c.head, body_key)] = c
            else:
                open_heads.append(c)
        flagged: set[int] = set()
        for i, c in enumerate(open_heads):
            others = open_heads[i + 1:] + list(ground_seen.values())
            for d in others:
                if _same_body_overlap(c, d, renamer):
                    later = d if d.pos and c.pos and d.pos > c.pos else c
                    if id(later) not in flagged:
                        flagged.add(id(later))
                        add(
                            "duplicate-definition",
                            f"clauses for {c.attribute} have unifiable heads and identical bodies",
                            later,
                        )

    if strict and diags:
        d = diags[0]
        raise d.error_class(str(d))
    return diags


def _same_body_overlap(c: DistClause, d: DistClause, renamer: Renamer) -> bool:
    mc, md = {}, {}
    hc = renamer.rename(c.head, mc)
    bc = tuple(renamer.rename(b, mc) for b in c.body)
    hd = renamer.rename(d.head, md)
    bd = tuple(renamer.rename(b, md) for b in d.body)
    s = unify_terms(hc, hd, {})
    if s is None:
        return False
    bc = tuple(resolve(b, s) for b in bc)
    bd = tuple(resolve(b, s) for b in bd)
    return _variant_key(bc) == _variant_key(bd)
