"""Stochastic EM over missing attribute cells.

The loop starts from a program learned on the partial data (missing parents
are routed through fail branches), then alternates

* E-step: sample one imputation ``z`` of every unobserved cell from the
  current program conditioned on the observed cells, and
* M-step: relearn the program on the completed data by plain
  log-likelihood (unit weights), then drop the imputation again.

The E-step splits the unobserved cells into blocks that are independent
given the observed cells: connected components of the moral dependency
graph restricted to unobserved variables.  Each block draws ``K``
likelihood-weighted particles (the block sampled from its distribution
given observed parents, weighted by its observed children) and keeps one
with probability proportional to its weight.  The mean particle weights
also give an estimate of the observed-data log-likelihood, which is the
trace reported per iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .engine.core import UNDEFINED, Engine, World
from .engine.estimate import _touch_evidence
from .engine.relevance import DependencyGraph, dependency_graph
from .errors import ZeroEvidenceWeight
from .learner.dlt import LearnParams
from .learner.jmp import LearnedJMP, learn_jmp, with_database
from .relational import BiasSpec, Transformed
from .syntax.printer import format_term
from .syntax.program import DistClause, Program
from .syntax.terms import struct, term_key

DEFAULT_PARTICLES = 50
DEFAULT_ITERS = 5
MAX_PARTICLES = 50 * 64


@dataclass
class Block:
    latent: tuple  # unobserved random variables, sampled jointly
    children: dict  # observed variables weighted by the block
    fixed: dict  # observed parents clamped without weight


@dataclass
class EMResult:
    model: LearnedJMP
    trace: list = field(default_factory=list)  # (iteration, observed-data log-likelihood)
    imputation: dict = field(default_factory=dict)  # last E-step sample


def _sort_key(rank: Sequence):
    order = {a: i for i, a in enumerate(rank)}
    return lambda rv: (order.get(term_key(rv)[0], len(order)), format_term(rv))


def partition_blocks(graph: DependencyGraph, observed: Mapping, rank: Sequence = ()) -> tuple[list, dict]:
    """Conditionally independent blocks of unobserved variables.

    Returns ``(blocks, direct)`` where ``direct`` holds the observed
    variables whose parents are all observed; their factors need no
    sampling.
    """
    latent = {n for n in graph.nodes if n not in observed}
    parent_of = {n: n for n in latent}  # union-find forest

    def find(x):
        while parent_of[x] != x:
            parent_of[x] = parent_of[parent_of[x]]
            x = parent_of[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent_of[max(ra, rb, key=format_term)] = min(ra, rb, key=format_term)

    for n in graph.nodes:
        hidden = [p for p in graph.parents.get(n, ()) if p in latent]
        if n in latent:
            hidden.append(n)
        for a, b in zip(hidden, hidden[1:]):
            union(a, b)
    groups: dict = {}
    for n in latent:
        groups.setdefault(find(n), []).append(n)
    key = _sort_key(rank)
    blocks = []
    assigned: set = set()
    for members in groups.values():
        members = sorted(members, key=key)
        kids = {c for m in members for c in graph.children.get(m, ()) if c in observed}
        assigned |= kids
        fixed = {}
        for n in (*members, *kids):
            for p in graph.parents.get(n, ()):
                if p in observed and p not in kids:
                    fixed[p] = observed[p]
        blocks.append(
            Block(tuple(members), {c: observed[c] for c in sorted(kids, key=key)}, fixed)
        )
    blocks.sort(key=lambda b: key(b.latent[0]))
    direct = {k: v for k, v in observed.items() if k in graph.nodes and k not in assigned}
    return blocks, direct


def _block_particles(eng: Engine, block: Block, k: int, rng) -> tuple[np.ndarray, list]:
    logw = np.empty(k)
    samples = []
    for i in range(k):
        world = World(rng, block.children, block.fixed)
        for rv in block.latent:
            eng.value_of(rv, world)
        _touch_evidence(eng, world, block.children)
        logw[i] = world.log_weight
        samples.append({rv: world.memo.get(rv, UNDEFINED) for rv in block.latent})
    return logw, samples


def _direct_loglik(eng: Engine, graph: DependencyGraph, direct: Mapping, observed: Mapping, rng) -> float:
    """Sum of ``ln p(x | observed parents)`` for cells with fully observed parents."""
    total = 0.0
    for rv, v in direct.items():
        world = World(rng, {rv: v}, {p: observed[p] for p in graph.parents.get(rv, ())})
        eng.value_of(rv, world)
        total += world.log_weight
    return total


@dataclass
class EStep:
    imputation: dict
    loglik: float  # estimated observed-data log-likelihood


def e_step(
    program: Program | Engine,
    observed: Mapping,
    missing: Sequence,
    k: int,
    rng: np.random.Generator,
    rank: Sequence = (),
) -> EStep:
    """Sample an imputation of ``missing`` given ``observed`` and estimate ``ln p(observed)``.

    A block whose ``k`` particles all have zero weight is retried with
    twice as many particles, up to a cap, before ZeroEvidenceWeight.
    """
    eng = program if isinstance(program, Engine) else Engine(program)
    graph = dependency_graph(eng)
    blocks, direct = partition_blocks(graph, observed, rank)
    wanted = set(missing)
    imputation = {}
    loglik = _direct_loglik(eng, graph, direct, observed, rng)
    for block in blocks:
        n = k
        while True:
            logw, samples = _block_particles(eng, block, n, rng)
            total = logsumexp(logw)
            if total > -math.inf:
                break
            if n >= max(MAX_PARTICLES, k):
                raise ZeroEvidenceWeight(
                    f"all {n} particles for {format_term(block.latent[0])} have zero weight"
                )
            n *= 2
        loglik += total - math.log(n)
        probs = np.exp(logw - total)
        pick = samples[int(rng.choice(n, p=probs / probs.sum()))]
        for rv, v in pick.items():
            if rv in wanted and v is not UNDEFINED:
                imputation[rv] = v
    key = _sort_key(rank)
    return EStep(dict(sorted(imputation.items(), key=lambda kv: key(kv[0]))), float(loglik))


def e_step_sample(
    program: Program | Engine,
    observed: Mapping,
    missing: Sequence,
    k: int = DEFAULT_PARTICLES,
    rng: np.random.Generator | None = None,
    rank: Sequence = (),
) -> dict:
    """One imputation ``{cell: value}`` drawn from the program given the observed cells."""
    rng = rng if rng is not None else np.random.default_rng(0)
    if not missing:
        return {}
    return e_step(program, observed, missing, k, rng, rank).imputation


def imputation_facts(imputation: Mapping) -> tuple:
    return tuple(DistClause(rv, struct("val", v)) for rv, v in imputation.items())


def bootstrap_program(data: Transformed, bias: BiasSpec, params: LearnParams | None = None) -> LearnedJMP:
    """Program learned on the partial data; missing parents use fail branches."""
    return learn_jmp(data, bias, params)


def m_step_relearn(
    data: Transformed, imputation: Mapping, bias: BiasSpec, params: LearnParams | None = None
) -> LearnedJMP:
    """Relearn on observed plus imputed cells by plain log-likelihood.

    The imputation only enters this call's training program; ``data`` is
    left untouched, so the imputed facts are gone once the call returns.
    """
    params = params or LearnParams()
    complete = LearnParams(**{**params.__dict__, "complete_data": True})
    return learn_jmp(data, bias, complete, extra=imputation_facts(imputation))


def observed_loglik(
    model: LearnedJMP | Program, data: Transformed, k: int, rng: np.random.Generator, rank: Sequence = ()
) -> float:
    program = model.program if isinstance(model, LearnedJMP) else model
    cells = tuple(data.missing) + tuple(data.queries)
    return e_step(with_database(program, data), data.observed(), [c.rv for c in cells], k, rng, rank).loglik


def run_stochastic_em(
    data: Transformed,
    bias: BiasSpec,
    iters: int = DEFAULT_ITERS,
    params: LearnParams | None = None,
    k: int = DEFAULT_PARTICLES,
    seed: int = 0,
) -> EMResult:
    """Bootstrap, then ``iters`` rounds of E-step and M-step.

    The trace holds ``iters + 1`` pairs ``(i, ln p(observed | P^i))``;
    ``iters = 0`` returns the bootstrap program.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    params = params or LearnParams(seed=seed)
    rng = np.random.default_rng(seed)
    observed = data.observed()
    missing = [c.rv for c in (*data.missing, *data.queries)]
    model = bootstrap_program(data, bias, params)
    trace = []
    imputation: dict = {}
    for i in range(iters + 1):
        step = e_step(with_database(model.program, data), observed, missing, k, rng, bias.rank)
        trace.append((i, step.loglik))
        if i == iters:
            break
        imputation = step.imputation
        model = m_step_relearn(data, imputation, bias, params)
    return EMResult(model, trace, imputation)


def trace_csv(trace: Sequence) -> str:
    lines = ["iteration,loglik"]
    lines += [f"{i},{ll!r}" for i, ll in trace]
    return "\n".join(lines) + "\n"
