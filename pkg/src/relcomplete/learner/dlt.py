"""Induction of distributional logic trees (DLTs).

A DLT for attribute ``a`` has the entity atom ``e(T)`` at its root and a
test literal at every internal node.  Every root-to-leaf path becomes one
distributional clause; tests partition the examples (one branch per label
or success, plus a fail branch), so the clauses are mutually exclusive and
together cover every entity.

Examples are the entities whose target cell is defined.  Each example is
proved in ``N`` persistent worlds; a world that satisfies the path body
contributes a record of weight ``w_q w_e / sum_j w_e = 1/N`` (no evidence is
used while learning), so leaves are fitted by weighted maximum likelihood
on the expected log-likelihood and scored by BIC.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..distributions import FitResult, fit_weighted_mle, log_density
from ..engine.core import UNDEFINED, Engine, World
from ..errors import NoExamples, UnknownAttribute
from ..relational import BiasSpec
from ..syntax.printer import format_term
from ..syntax.program import DistClause, Program
from ..syntax.terms import Struct, Var, resolve, struct
from .refine import Refinement, refinements

FAIL = ("fail",)
SUCCESS = ("success",)


@dataclass
class LearnParams:
    epsilon: float = 0.0
    max_depth: int = 4
    max_body: int = 6
    n_proofs: int | None = None  # None: 1 for deterministic data, else 20
    min_leaf: int = 5
    complete_data: bool = False
    seed: int = 0


# ---------------------------------------------------------------------------
# training data


def is_deterministic(p: Program) -> bool:
    """True when every distributional clause is a ground ``val`` fact."""
    return all(
        not c.body and type(c.dist) is Struct and c.dist.functor == "val" for c in p.dist_clauses
    )


class TrainingSet:
    """Entities, target values and test outcomes in ``N`` persistent worlds.

    Outcomes are cached per (literal, entity), so every refinement is proved
    once per world however often it is scored.
    """

    def __init__(self, program: Program, bias: BiasSpec, n_proofs: int | None = None, seed: int = 0):
        self.program = program
        self.bias = bias
        self.engine = Engine(program)
        if n_proofs is None:
            n_proofs = 1 if is_deterministic(program) else 20
        self.n = n_proofs
        rng = np.random.default_rng(seed)
        self.worlds = [World(rng) for _ in range(n_proofs)]
        self._entities: dict = {}
        self._targets: dict = {}
        self._outcomes: dict = {}

    def entity_predicate(self, attribute: str) -> str:
        ty = self.bias.type_of(attribute)
        for f, args in self.bias.types.items():
            if args == (ty,) and f not in self.bias.rands:
                return f
        raise UnknownAttribute(f"no entity predicate of type {ty} for {attribute}")

    def entities(self, predicate: str) -> list:
        keys = self._entities.get(predicate)
        if keys is None:
            x = Var("E")
            keys = [s[x] for s in self.engine.solve((struct(predicate, x),), {}, World(None))]
            keys = list(dict.fromkeys(keys))
            self._entities[predicate] = keys
        return keys

    def target_values(self, attribute: str, keys: Sequence) -> list:
        """Per entity, the tuple of target values over the worlds (None = undefined)."""
        cached = self._targets.get(attribute)
        if cached is None:
            cached = []
            for k in keys:
                row = []
                for w in self.worlds:
                    v = self.engine.value_of(struct(attribute, k), w)
                    row.append(None if v is UNDEFINED else v)
                cached.append(tuple(row))
            self._targets[attribute] = cached
        return cached

    def outcomes(self, ref: Refinement, keys: Sequence) -> list:
        """Per entity, the tuple of test outcomes over the worlds (None = fails)."""
        cached = self._outcomes.get(ref.signature)
        if cached is None:
            head = Var("T")
            goal, out = ref.literal(head)
            cached = []
            for k in keys:
                row = []
                for w in self.worlds:
                    s = self.engine.prove((goal,), w, {head: k})
                    row.append(None if s is None else resolve(out, s))
                cached.append(tuple(row))
            self._outcomes[ref.signature] = cached
        return cached


@dataclass
class Records:
    """Weighted proof records: entity index, world index, features, target."""

    ex: np.ndarray
    world: np.ndarray
    X: np.ndarray
    y: list
    w: np.ndarray

    def __len__(self):
        return len(self.y)

    @property
    def n_examples(self) -> int:
        return len(set(self.ex.tolist()))

    def subset(self, idx, extra_column=None) -> "Records":
        idx = np.asarray(idx, dtype=int)
        X = self.X[idx]
        if extra_column is not None:
            X = np.column_stack([X, np.asarray(extra_column, dtype=float)]) if len(idx) else np.zeros((0, X.shape[1] + 1))
        return Records(self.ex[idx], self.world[idx], X, [self.y[i] for i in idx], self.w[idx])


# ---------------------------------------------------------------------------
# tree structure


@dataclass
class Leaf:
    fit: FitResult
    features: tuple  # continuous variables in scope, in order
    n_examples: int
    score: float
    inherited: bool = False  # parameters copied from the parent (too few examples)


@dataclass
class Node:
    refinement: Refinement
    tag: str
    children: list  # (branch, Node | Leaf)
    score: float  # score of the split
    leaf_score: float  # score of not splitting
    n_examples: int


@dataclass
class DLT:
    target: str
    entity: str
    head: Var
    continuous: bool
    labels: tuple
    root: Node | Leaf
    report: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# leaves and scores


def score_clause(fit: FitResult, n_examples: int) -> float:
    """BIC score ``2 E - k ln |E|`` of one clause."""
    if n_examples <= 0:
        return 0.0
    return 2.0 * fit.loglik - fit.n_params * math.log(n_examples)


def fit_leaf(recs: Records, continuous: bool, labels: Sequence = (), complete_data: bool = False) -> tuple:
    """Fit the leaf distribution (and statistical model when features exist).

    Returns ``(fit, score)``.  With features the leaf with a model and the
    constant leaf are both fitted and the better BIC is kept.
    """
    w = np.ones(len(recs)) if complete_data else recs.w
    n_ex = recs.n_examples
    has_features = recs.X.shape[1] > 0
    if continuous:
        kinds = ["gaussian"] + (["linear"] if has_features else [])
    else:
        kinds = ["discrete"]
        if has_features:
            kinds.append("logistic" if len(labels) == 2 else "softmax")
    best = None
    for kind in kinds:
        X = recs.X if kind in ("linear", "logistic", "softmax") else np.zeros((len(recs), 0))
        fit = fit_weighted_mle(kind, X, recs.y, w, labels=None if continuous else tuple(labels))
        s = score_clause(fit, n_ex)
        if best is None or s > best[1]:
            best = (fit, s)
    return best


def inherited_loglik(fit: FitResult, recs: Records, n_features: int) -> float:
    """Weighted log-likelihood of ``recs`` under a parent's fitted leaf."""
    total = 0.0
    for x, y, w in zip(recs.X[:, :n_features], recs.y, recs.w):
        if w > 0:
            total += w * log_density(fit.predict(tuple(float(v) for v in x)), y)
    return total


@dataclass
class Split:
    refinement: Refinement
    score: float
    branches: list  # (branch, Records, extends_features)


def partition(recs: Records, ref: Refinement, outcomes: list) -> list:
    """Split records by the test outcome: labels / success, then fail."""
    groups: dict = {}
    values: dict = {}
    for i, (e, j) in enumerate(zip(recs.ex.tolist(), recs.world.tolist())):
        v = outcomes[e][j]
        if v is None:
            b = FAIL
        elif ref.continuous:
            b = SUCCESS
            values.setdefault(b, []).append(float(v))
        else:
            b = ("value", v)
        groups.setdefault(b, []).append(i)
    order = [SUCCESS] if ref.continuous else [("value", l) for l in ref.domain]
    order += [b for b in groups if b not in order and b != FAIL] + [FAIL]
    out = []
    for b in order:
        idx = groups.get(b, [])
        if b == SUCCESS:
            out.append((b, recs.subset(idx, values.get(b, [])), True))
        else:
            out.append((b, recs.subset(idx), False))
    return out


def score_refinement(
    recs: Records,
    ref: Refinement,
    outcomes: list,
    parent_fit: FitResult,
    continuous: bool,
    labels: Sequence,
    params: LearnParams,
) -> Split:
    """Sum of branch clause scores; empty branches contribute nothing.

    Branches with fewer than ``params.min_leaf`` examples are scored with
    the parent's parameters and no new parameters.
    """
    total = 0.0
    branches = partition(recs, ref, outcomes)
    n_parent = recs.X.shape[1]
    for _, sub, _ in branches:
        n_ex = sub.n_examples
        if n_ex == 0:
            continue
        if n_ex < params.min_leaf:
            total += 2.0 * inherited_loglik(parent_fit, sub, n_parent)
        else:
            total += fit_leaf(sub, continuous, labels, params.complete_data)[1]
    return Split(ref, total, branches)


# ---------------------------------------------------------------------------
# induction


_RESERVED = re.compile(r"^(Mean|P\d+|[VRX]\d+|A\d+_\d+|T)$")


def head_variable(entity_type: str) -> Var:
    name = entity_type[:1].upper() + entity_type[1:]
    if not name[:1].isalpha() or _RESERVED.match(name):
        name = "E"
    return Var(name)


def _goal_count(ref: Refinement, branch) -> int:
    return 2 if branch[0] == "value" else 1


def induce_dlt(
    target: str,
    data: TrainingSet,
    params: LearnParams | None = None,
    rank=None,
) -> DLT:
    """Grow a DLT for ``target`` greedily, splitting while BIC improves by more than epsilon."""
    params = params or LearnParams()
    bias = data.bias
    if target not in bias.rands:
        raise UnknownAttribute(f"{target} has no rand declaration")
    decl = bias.rands[target]
    labels = tuple(decl.domain)
    entity = data.entity_predicate(target)
    keys = data.entities(entity)
    targets = data.target_values(target, keys)
    ex, wi, ys = [], [], []
    for e, row in enumerate(targets):
        for j, v in enumerate(row):
            if v is not None:
                ex.append(e)
                wi.append(j)
                ys.append(v)
    if not ys:
        raise NoExamples(f"no entity has an observed {target}")
    recs = Records(
        np.array(ex, dtype=int),
        np.array(wi, dtype=int),
        np.zeros((len(ys), 0)),
        ys,
        np.full(len(ys), 1.0 / data.n),
    )
    head = head_variable(bias.type_of(target))
    report: list = []

    def grow(recs, path, features, depth, body_len, where):
        fit, leaf_score = fit_leaf(recs, decl.continuous, labels, params.complete_data)
        leaf = Leaf(fit, features, recs.n_examples, leaf_score)
        if depth >= params.max_depth:
            return leaf
        best = None
        for ref in refinements(target, bias, path, rank):
            if body_len + 2 > params.max_body and not ref.continuous:
                continue
            if body_len + 1 > params.max_body:
                continue
            split = score_refinement(
                recs, ref, data.outcomes(ref, keys), fit, decl.continuous, labels, params
            )
            if best is None or split.score > best.score:
                best = split
        gain = -math.inf if best is None else best.score - leaf_score
        if best is None or gain <= 0.0 or gain < params.epsilon:
            report.append(f"{where}: leaf n={recs.n_examples} score={leaf_score:.6g}")
            return leaf
        tag = str(depth + 1)
        _, out = best.refinement.literal(head, tag)
        report.append(
            f"{where}: split on {best.refinement.literal(head, tag)[0]!s} "
            f"n={recs.n_examples} score={best.score:.6g} leaf_score={leaf_score:.6g}"
        )
        children = []
        for branch, sub, extends in best.branches:
            feats = features + ((out,) if extends else ())
            label = "fail" if branch == FAIL else ("success" if branch == SUCCESS else format_term(branch[1]))
            child_where = f"{where}/{label}"
            if sub.n_examples < params.min_leaf:
                children.append((branch, Leaf(fit, features, sub.n_examples, 0.0, inherited=True)))
                report.append(f"{child_where}: inherited leaf n={sub.n_examples}")
                continue
            children.append(
                (
                    branch,
                    grow(
                        sub,
                        path + (best.refinement,),
                        feats,
                        depth + 1,
                        body_len + _goal_count(best.refinement, branch),
                        child_where,
                    ),
                )
            )
        return Node(best.refinement, tag, children, best.score, leaf_score, recs.n_examples)

    root = grow(recs, (), (), 0, 0, target)
    return DLT(target, entity, head, decl.continuous, labels, root, report)


# ---------------------------------------------------------------------------
# trees to clauses


def _leaf_clause(t: DLT, body: list, leaf: Leaf) -> DistClause:
    head = struct(t.target, t.head)
    fit = leaf.fit
    feats = leaf.features
    if fit.kind == "gaussian":
        d = fit.dist
        return DistClause(head, struct("gaussian", d.mean, d.var), tuple(body))
    if fit.kind == "discrete":
        d = fit.dist
        pairs = tuple(struct(":", p, l) for l, p in zip(d.labels, d.probs))
        return DistClause(head, struct("discrete", pairs), tuple(body))
    n = len(fit.model.weights) - 1 if fit.kind in ("linear", "logistic") else len(fit.model.rows[0]) - 1
    inputs = tuple(feats[:n])
    if fit.kind == "linear":
        m = Var("Mean")
        atom = struct("linear", inputs, tuple(fit.model.weights), m)
        return DistClause(head, struct("gaussian", m, fit.variance), tuple(body) + (atom,))
    ps = tuple(Var(f"P{i + 1}") for i in range(len(fit.labels)))
    if fit.kind == "logistic":
        atom = struct("logistic", inputs, tuple(fit.model.weights), ps)
    else:
        atom = struct("softmax", inputs, tuple(tuple(r) for r in fit.model.rows), ps)
    pairs = tuple(struct(":", p, l) for p, l in zip(ps, fit.labels))
    return DistClause(head, struct("discrete", pairs), tuple(body) + (atom,))


def dlt_to_clauses(t: DLT) -> list:
    """One distributional clause per leaf, in depth-first branch order."""
    out = []

    def walk(node, body):
        if isinstance(node, Leaf):
            out.append(_leaf_clause(t, body, node))
            return
        ref = node.refinement
        goal, var = ref.literal(t.head, node.tag)
        for branch, child in node.children:
            if branch == FAIL:
                walk(child, body + [ref.negated(t.head, node.tag)])
            elif branch == SUCCESS:
                walk(child, body + [goal])
            else:
                walk(child, body + [goal, struct("==", var, branch[1])])

    walk(t.root, [struct(t.entity, t.head)])
    return out


def tree_shape(node) -> object:
    """Compact description: leaf kind, or (attribute, aggregator, children)."""
    if isinstance(node, Leaf):
        return node.fit.kind
    return (
        node.refinement.attribute,
        node.refinement.aggregator,
        tuple((b, tree_shape(c)) for b, c in node.children),
    )
