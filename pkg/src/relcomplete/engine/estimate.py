"""Forward sampling, likelihood weighting and weighted proof records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from ..distributions import Gaussian, Val
from ..errors import InstantiationError, NonTermination, ZeroEvidenceWeight
from ..syntax.printer import format_term
from ..syntax.program import Program
from ..syntax.terms import Struct, Var, is_ground, resolve, struct
from .core import UNDEFINED, Engine, World


def _engine(p) -> Engine:
    return p if isinstance(p, Engine) else Engine(p)


# ---------------------------------------------------------------------------
# forward sampling


def forward_sample_world(
    p: Program | Engine,
    rng: np.random.Generator,
    max_rounds: int = 1000,
    fixed: Mapping | None = None,
) -> World:
    """Sample a possible world by iterating the stochastic consequence operator.

    Every distributional clause whose body holds has its head sampled
    (once, through the world's memo table) and every definite clause whose
    body holds adds its head to ``world.derived``; the loop stops at the
    first round that adds nothing.  ``fixed`` pre-assigns random variables.
    """
    eng = _engine(p)
    world = World(rng, fixed=fixed)
    world.derived.update(c.head for c in eng.program.facts)
    dist_clauses = eng.program.dist_clauses
    rules = eng.program.rules
    for _ in range(max_rounds):
        before = (len(world.memo), len(world.derived))
        for c in dist_clauses:
            for s in eng.solve(c.body, {}, world):
                head = resolve(c.head, s)
                if not is_ground(head):
                    raise InstantiationError(f"distributional clause head {format_term(head)} is not ground")
                eng.value_of(head, world)
        for r in rules:
            for s in eng.solve(r.body, {}, world):
                world.derived.add(resolve(r.head, s))
        if (len(world.memo), len(world.derived)) == before:
            return world
    raise NonTermination(f"no fixpoint after {max_rounds} rounds")


# ---------------------------------------------------------------------------
# conditional queries


@dataclass
class Query:
    """``goal`` given ``evidence`` (ground random variable -> observed value)."""

    goal: tuple
    evidence: dict = field(default_factory=dict)


@dataclass
class Predictive:
    """Weighted-sample summary of one random variable's posterior."""

    rv: object
    continuous: bool
    probs: dict = field(default_factory=dict)
    mean: float = math.nan
    variance: float = math.nan
    samples: np.ndarray | None = None
    weights: np.ndarray | None = None
    n_samples: int = 0
    evidence_weight: float = 0.0

    @property
    def mode(self):
        """Point prediction: most probable label, or the weighted mean."""
        if self.continuous:
            return self.mean
        top = max(self.probs.values())
        return min((l for l, p in self.probs.items() if p == top), key=lambda l: format_term(l))


def evidence_goals(evidence: Mapping) -> tuple:
    return tuple(struct("~=", rv, v) for rv, v in evidence.items())


def _touch_evidence(eng: Engine, world: World, evidence: Mapping) -> None:
    for rv in evidence:
        eng.value_of(rv, world)
        if world.log_weight == -math.inf:
            return


def weighted_worlds(eng: Engine, evidence: Mapping, n: int, rng, fixed=None):
    """Yield ``n`` worlds in which all evidence has been weighted."""
    for _ in range(n):
        world = World(rng, evidence, fixed)
        _touch_evidence(eng, world, evidence)
        yield world


def estimate_conditional(query: Query, p: Program | Engine, n: int, rng: np.random.Generator) -> float:
    """Likelihood-weighting estimate of ``p(goal | evidence)``.

    Each of the ``n`` samples proves the evidence first and the goal
    second; the estimate is ``sum w_q w_e / sum w_e`` computed in log space.
    """
    return weighted_estimate(query, p, n, rng)[0]


def weighted_estimate(
    query: Query, p: Program | Engine, n: int, rng: np.random.Generator
) -> tuple[float, float]:
    """``(estimate, mean evidence weight)`` of a conditional query."""
    if n < 1:
        raise ValueError("need at least one sample")
    eng = _engine(p)
    log_we = np.full(n, -math.inf)
    hit = np.zeros(n, dtype=bool)
    for i, world in enumerate(weighted_worlds(eng, query.evidence, n, rng)):
        log_we[i] = world.log_weight
        if world.log_weight == -math.inf:
            continue
        hit[i] = eng.prove(query.goal, world) is not None
        # the goal may touch further evidence
        log_we[i] = world.log_weight
    total = logsumexp(log_we)
    if total == -math.inf:
        raise ZeroEvidenceWeight(f"all {n} samples have zero evidence weight")
    mean_weight = float(math.exp(total - math.log(n)))
    if not hit.any():
        return 0.0, mean_weight
    return float(min(1.0, math.exp(logsumexp(log_we[hit]) - total))), mean_weight


def predictive(
    rv,
    evidence: Mapping,
    p: Program | Engine,
    n: int,
    rng: np.random.Generator,
    labels: Sequence | None = None,
    fixed: Mapping | None = None,
) -> Predictive:
    """Posterior of a single random variable by likelihood weighting.

    Discrete variables get weighted label frequencies (every label in
    ``labels`` is listed, possibly with zero mass); continuous ones get the
    weighted mean and variance.  Samples where ``rv`` is undefined count as
    failed queries.  ``fixed`` clamps random variables without weight.
    """
    eng = _engine(p)
    evidence = {k: v for k, v in evidence.items() if k != rv}
    fixed = {k: v for k, v in (fixed or {}).items() if k != rv}
    values, logw = [], []
    total = []
    for world in weighted_worlds(eng, evidence, n, rng, fixed):
        if world.log_weight == -math.inf:
            total.append(-math.inf)
            continue
        v = eng.value_of(rv, world)
        total.append(world.log_weight)
        if v is not UNDEFINED:
            values.append(v)
            logw.append(world.log_weight)
    norm = logsumexp(total) if total else -math.inf
    if norm == -math.inf:
        raise ZeroEvidenceWeight(f"all {n} samples have zero evidence weight for {format_term(rv)}")
    w = np.exp(np.asarray(logw) - norm) if logw else np.zeros(0)
    continuous = bool(values) and type(values[0]) is float
    pred = Predictive(rv, continuous, n_samples=n, evidence_weight=float(math.exp(norm) / n))
    if continuous:
        x = np.asarray(values, dtype=float)
        mass = w.sum()
        pred.mean = float(w @ x / mass)
        pred.variance = float(w @ (x - pred.mean) ** 2 / mass)
        pred.samples, pred.weights = x, w
    else:
        probs = dict.fromkeys(labels or (), 0.0)
        for v, wt in zip(values, w):
            probs[v] = probs.get(v, 0.0) + float(wt)
        pred.probs = probs
    return pred


def log_conditional_density(
    rv,
    value,
    evidence: Mapping,
    p: Program | Engine,
    n: int,
    rng: np.random.Generator,
    exact: bool = True,
    fixed: Mapping | None = None,
) -> float:
    """Estimate ``ln p(rv = value | evidence)`` as a ratio of weight averages.

    The numerator treats ``rv = value`` as one more observation, the
    denominator uses the evidence alone; both are plain likelihood-weighting
    averages, so the ratio is a density for continuous variables and a
    probability for discrete ones.

    With ``exact`` set, a world in which nothing besides ``rv`` is sampled
    has a deterministic weight ``g(x)``; the ratio is then computed without
    sampling as ``g(value) / sum_l g(l)`` for discrete variables and
    ``g(value) / integral g(x) dx`` (adaptive quadrature) for continuous
    ones.  Any sampled variable falls back to the sampling estimate.
    ``fixed`` clamps random variables without weight.
    """
    eng = _engine(p)
    evidence = {k: v for k, v in evidence.items() if k != rv}
    fixed = {k: v for k, v in (fixed or {}).items() if k != rv}
    if exact:
        try:
            return _exact_log_conditional(eng, rv, value, evidence, fixed, rng)
        except _NotDeterministic:
            pass
    joint = dict(evidence)
    joint[rv] = value
    num = [w.log_weight for w in _weighted_with_target(eng, joint, fixed, rv, n, rng)]
    den = [w.log_weight for w in weighted_worlds(eng, evidence, n, rng, fixed)] if evidence else [0.0]
    log_den = logsumexp(den) - math.log(len(den))
    if log_den == -math.inf:
        raise ZeroEvidenceWeight(f"evidence has zero weight when scoring {format_term(rv)}")
    return float(logsumexp(num) - math.log(n) - log_den)


def _weighted_with_target(eng, joint, fixed, rv, n, rng):
    for _ in range(n):
        world = World(rng, joint, fixed)
        eng.value_of(rv, world)
        _touch_evidence(eng, world, joint)
        yield world


class _NotDeterministic(Exception):
    pass


def _sampled_anything(world: World, given: Mapping, fixed: Mapping) -> bool:
    return any(v is not UNDEFINED and k not in given and k not in fixed for k, v in world.memo.items())


def _joint_log_weight(eng: Engine, rv, x, evidence: Mapping, fixed: Mapping, rng) -> float:
    """Weight of the world with ``rv = x`` observed; raises if anything was sampled."""
    joint = dict(evidence)
    joint[rv] = x
    world = World(rng, joint, fixed)
    eng.value_of(rv, world)
    _touch_evidence(eng, world, joint)
    if _sampled_anything(world, joint, fixed):
        raise _NotDeterministic
    return world.log_weight


def _exact_log_conditional(eng: Engine, rv, value, evidence: Mapping, fixed: Mapping, rng) -> float:
    probe = World(rng, evidence, fixed)
    dist = eng.distribution_of(rv, probe)
    if _sampled_anything(probe, evidence, fixed):
        raise _NotDeterministic
    if dist is None:
        return -math.inf

    def g(x):
        return _joint_log_weight(eng, rv, x, evidence, fixed, rng)

    num = g(value)
    if type(dist) is Val:
        den = g(dist.value)
    elif type(dist) is Gaussian:
        den = _log_integral(g, dist, value)
    elif hasattr(dist, "labels"):
        den = float(logsumexp([g(l) for l in dist.labels]))
    else:
        raise _NotDeterministic
    if den == -math.inf:
        raise ZeroEvidenceWeight(f"evidence has zero weight when scoring {format_term(rv)}")
    return float(num - den)


def _log_integral(g, prior: Gaussian, anchor: float) -> float:
    """``ln integral exp(g(x)) dx`` for a log-weight around a Gaussian prior.

    Observed children can pin the variable far more tightly than its prior,
    so the peak of ``g`` is located first (from the prior mean and from
    ``anchor``), its width is read off the curvature, and the integral is
    split into a fine window around each peak and the prior bulk.
    """
    sd = math.sqrt(prior.var)
    lo, hi = prior.mean - 12.0 * sd, prior.mean + 12.0 * sd
    peaks = []
    for start in (prior.mean, float(anchor)):
        c, width = _local_max(g, start, sd)
        if not any(abs(c - c2) < w2 for c2, w2 in peaks):
            peaks.append((c, width))
        lo, hi = min(lo, c - 40.0 * width), max(hi, c + 40.0 * width)
    top = max(g(c) for c, _ in peaks)
    if top == -math.inf:
        return -math.inf
    cuts = {lo, hi}
    for c, width in peaks:
        cuts.update(x for x in (c - 40.0 * width, c - 4.0 * width, c, c + 4.0 * width, c + 40.0 * width) if lo <= x <= hi)
    cuts = sorted(cuts)
    floor = 1e-10 * min(w for _, w in peaks)

    def f(x):
        return math.exp(g(x) - top)

    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b > a:
            total += integrate.quad(f, a, b, limit=100, epsabs=floor, epsrel=1e-7)[0]
    return top + math.log(total) if total > 0 else -math.inf


def _local_max(g, start: float, scale: float) -> tuple[float, float]:
    """Damped Newton ascent on ``g`` from ``start``; returns ``(argmax, width)``.

    Derivatives are central differences.  ``width`` is ``1/sqrt(-g'')`` at
    the maximum, capped at ``scale`` (kinks and flat regions use ``scale``).
    """
    x, gx = start, g(start)
    width = scale
    for _ in range(100):
        h = width * 1e-3
        gp, gm = g(x + h), g(x - h)
        d1 = (gp - gm) / (2.0 * h)
        d2 = (gp - 2.0 * gx + gm) / (h * h)
        if d2 < 0 and math.isfinite(d2):
            width = min(scale, 1.0 / math.sqrt(-d2))
            step = max(-4.0 * scale, min(4.0 * scale, -d1 / d2))
        else:
            width = scale
            step = scale if d1 > 0 else -scale
        if abs(step) < width * 1e-6:
            break
        while True:
            gn = g(x + step)
            if gn > gx or abs(step) < width * 1e-6:
                break
            step /= 2.0
        if gn <= gx:
            break
        x, gx = x + step, gn
    return x, width


# ---------------------------------------------------------------------------
# weighted proof records


@dataclass
class ProofRecord:
    """One attempt at proving ``head, body`` in a fresh world.

    ``weight`` is ``w_q w_e / sum_j w_e`` over the attempts for the same
    substitution; failed attempts carry weight 0 and no bindings.
    """

    bindings: dict | None
    head_value: object
    weight: float
    world: World | None = None


def sample_weighted_proofs(
    head_rv,
    body: Sequence,
    theta: Mapping,
    p: Program | Engine,
    n: int,
    rng: np.random.Generator,
    variables: Sequence[Var] = (),
    evidence: Mapping | None = None,
) -> list[ProofRecord]:
    """Prove ``?- head_rv ~= H, body`` (under ``theta``) ``n`` times."""
    eng = _engine(p)
    head = resolve(head_rv, theta)
    hv = Var("_Head")
    goals = (struct("~=", head, hv),) + tuple(resolve(b, theta) for b in body)
    evidence = evidence or {}
    raw = []
    for world in weighted_worlds(eng, evidence, n, rng):
        s = eng.prove(goals, world) if world.log_weight > -math.inf else None
        if s is None:
            raw.append((None, None, 0.0, world.log_weight, world))
        else:
            binds = {v: resolve(v, s) for v in variables}
            raw.append((binds, resolve(hv, s), 1.0, world.log_weight, world))
    log_we = np.array([r[3] for r in raw])
    norm = logsumexp(log_we)
    out = []
    for binds, value, wq, lw, world in raw:
        w = 0.0 if norm == -math.inf or wq == 0.0 else float(math.exp(lw - norm))
        out.append(ProofRecord(binds if wq else None, value, w, world))
    return out
