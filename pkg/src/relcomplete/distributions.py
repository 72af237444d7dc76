"""Distributions, statistical-model atoms and weighted maximum-likelihood fitting.

The Gaussian's second parameter is the variance.  Statistical models map
a feature vector ``y`` to distribution parameters through
``Z = y . W[:n] + W[n]`` (the last weight is the intercept).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .errors import ArityMismatch, DegenerateData, DistributionError, TypeMismatch

PROB_FLOOR = 1e-15
VARIANCE_FLOOR = 1e-6
RIDGE = 1e-6
LAPLACE_ALPHA = 1e-3
MAX_ITER = 500
GRAD_TOL = 1e-8
_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True)
class Val:
    value: object

    @property
    def is_continuous(self) -> bool:
        return type(self.value) is float


@dataclass(frozen=True)
class Gaussian:
    mean: float
    var: float

    def __post_init__(self):
        if not (self.var > 0) or not math.isfinite(self.var):
            raise DistributionError(f"gaussian variance must be positive, got {self.var}")
        if not math.isfinite(self.mean):
            raise DistributionError(f"gaussian mean must be finite, got {self.mean}")

    is_continuous = True


@dataclass(frozen=True)
class Discrete:
    labels: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.labels) != len(self.probs) or not self.labels:
            raise DistributionError("discrete needs one probability per label")
        if len(set(self.labels)) != len(self.labels):
            raise DistributionError(f"duplicate labels in {self.labels}")
        if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-9:
            raise DistributionError(f"probabilities must be nonnegative and sum to 1: {self.probs}")

    is_continuous = False

    def prob(self, label) -> float:
        for l, p in zip(self.labels, self.probs):
            if l == label and type(l) is type(label):
                return p
        return 0.0


Distribution = Val | Gaussian | Discrete


def discrete_from_weights(labels: Sequence, weights: Sequence[float]) -> Discrete:
    """Build a Discrete from unnormalized weights, merging repeated labels."""
    acc: dict = {}
    for l, w in zip(labels, weights):
        if w < 0:
            raise DistributionError(f"negative probability {w} for {l!r}")
        acc[l] = acc.get(l, 0.0) + float(w)
    total = sum(acc.values())
    if total <= 0:
        raise DistributionError("discrete distribution has zero total mass")
    return Discrete(tuple(acc), tuple(v / total for v in acc.values()))


def log_density(d: Distribution, x) -> float:
    """Natural-log density (continuous) or log mass (discrete) of ``x``."""
    if type(d) is Gaussian:
        if type(x) is not float and not isinstance(x, (int, np.floating)):
            raise TypeMismatch(f"gaussian evaluated at non-number {x!r}")
        return -0.5 * (_LOG_2PI + math.log(d.var)) - (float(x) - d.mean) ** 2 / (2.0 * d.var)
    if type(d) is Discrete:
        if not any(type(l) is type(x) for l in d.labels):
            raise TypeMismatch(f"discrete over {d.labels} evaluated at {x!r}")
        p = d.prob(x)
        return math.log(p) if p > 0 else -math.inf
    if type(d) is Val:
        same = type(d.value) is type(x) and d.value == x
        return 0.0 if same else -math.inf
    raise TypeError(f"not a distribution: {d!r}")


def sample_distribution(d: Distribution, rng: np.random.Generator):
    if type(d) is Val:
        return d.value
    if type(d) is Gaussian:
        return float(rng.normal(d.mean, math.sqrt(d.var)))
    if type(d) is Discrete:
        u = rng.random()
        acc = 0.0
        for l, p in zip(d.labels, d.probs):
            acc += p
            if u < acc:
                return l
        return d.labels[-1]
    raise TypeError(f"not a distribution: {d!r}")


def mean_and_variance(d: Distribution) -> tuple[float, float]:
    if type(d) is Gaussian:
        return d.mean, d.var
    if type(d) is Val and type(d.value) is float:
        return d.value, 0.0
    raise TypeMismatch(f"{d!r} has no numeric moments")


# ---------------------------------------------------------------------------
# statistical models


@dataclass(frozen=True)
class Linear:
    weights: tuple

    @property
    def n_inputs(self) -> int:
        return len(self.weights) - 1


@dataclass(frozen=True)
class Logistic:
    weights: tuple

    @property
    def n_inputs(self) -> int:
        return len(self.weights) - 1


@dataclass(frozen=True)
class Softmax:
    rows: tuple  # one (n+1)-tuple per label

    def __post_init__(self):
        if len({len(r) for r in self.rows}) > 1:
            raise ArityMismatch("softmax weight rows differ in length")

    @property
    def n_inputs(self) -> int:
        return len(self.rows[0]) - 1


StatModel = Linear | Logistic | Softmax


def _clip_probs(p: list) -> list:
    p = [max(v, PROB_FLOOR) for v in p]
    total = math.fsum(p)
    return [v / total for v in p]


def _expit(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def eval_stat_model(m: StatModel, inputs: Sequence[float]) -> list[float]:
    """Distribution parameters produced by ``m`` on ``inputs``.

    Inputs are a handful of numbers, so plain float arithmetic is used.
    """
    y = [float(v) for v in inputs]
    if len(y) != m.n_inputs:
        raise ArityMismatch(f"{type(m).__name__} expects {m.n_inputs} inputs, got {len(inputs)}")
    if type(m) is Linear:
        w = m.weights
        return [math.fsum([a * b for a, b in zip(y, w)]) + w[-1]]
    if type(m) is Logistic:
        w = m.weights
        z = math.fsum([a * b for a, b in zip(y, w)]) + w[-1]
        p1 = min(max(_expit(z), PROB_FLOOR), 1.0 - PROB_FLOOR)
        return [p1, 1.0 - p1]
    if type(m) is Softmax:
        z = [math.fsum([a * b for a, b in zip(y, r)]) + r[-1] for r in m.rows]
        top = max(z)
        e = [math.exp(v - top) for v in z]
        total = math.fsum(e)
        return _clip_probs([v / total for v in e])
    raise TypeError(f"not a statistical model: {m!r}")


# ---------------------------------------------------------------------------
# weighted maximum likelihood

LEAF_KINDS = ("gaussian", "linear", "discrete", "logistic", "softmax")


@dataclass
class FitResult:
    """Outcome of a leaf fit.

    ``dist`` is the fitted head distribution for constant leaves; for leaves
    with a statistical model it is ``None`` and ``variance`` (linear) or the
    model output defines the head.
    """

    kind: str
    dist: Distribution | None
    model: StatModel | None
    loglik: float
    n_params: int
    labels: tuple = ()
    variance: float | None = None
    extra: dict = field(default_factory=dict)

    def predict(self, features: Sequence[float]) -> Distribution:
        if self.model is None:
            return self.dist
        params = eval_stat_model(self.model, features)
        if self.kind == "linear":
            return Gaussian(params[0], self.variance)
        return Discrete(self.labels, tuple(params))


def n_params(kind: str, n_features: int, n_labels: int = 0) -> int:
    """Free-parameter count used by the BIC penalty."""
    if kind == "gaussian":
        return 2
    if kind == "linear":
        return n_features + 2
    if kind == "discrete":
        return n_labels - 1
    if kind == "logistic":
        return n_features + 1
    if kind == "softmax":
        return n_labels * (n_features + 1)
    raise ValueError(f"unknown leaf kind {kind!r}")


def _prepare(X, y, w):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError("weights must be a vector")
    if w.size == 0 or not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
        raise DegenerateData("weighted fit needs nonnegative weights with positive sum")
    X = np.asarray(X, dtype=float).reshape(w.size, -1) if X is not None else np.zeros((w.size, 0))
    if X.shape[0] != w.size or len(y) != w.size:
        raise ArityMismatch("features, targets and weights disagree in length")
    return X, w / w.sum(), w


def fit_weighted_mle(
    kind: str,
    X,
    y: Sequence,
    w: Sequence[float],
    labels: Sequence | None = None,
) -> FitResult:
    """Maximize the weighted log-likelihood ``sum_i w_i ln p(y_i | x_i)``.

    Weights are normalized internally so the estimate does not depend on
    their overall scale.  ``loglik`` is reported with the original weights.
    """
    X, wn, w_orig = _prepare(X, y, w)
    n = X.shape[1]
    if kind in ("gaussian", "linear"):
        yv = np.asarray(y, dtype=float)
        if kind == "gaussian" or n == 0:
            mean = float(wn @ yv)
            var = max(float(wn @ (yv - mean) ** 2), VARIANCE_FLOOR)
            dist = Gaussian(mean, var)
            ll = float(w_orig @ (-0.5 * (_LOG_2PI + math.log(var)) - (yv - mean) ** 2 / (2 * var)))
            return FitResult("gaussian", dist, None, ll, n_params("gaussian", 0))
        beta = _weighted_least_squares(X, yv, wn)
        resid = yv - (X @ beta[:-1] + beta[-1])
        var = max(float(wn @ resid**2), VARIANCE_FLOOR)
        ll = float(w_orig @ (-0.5 * (_LOG_2PI + math.log(var)) - resid**2 / (2 * var)))
        return FitResult(
            "linear", None, Linear(tuple(float(b) for b in beta)), ll, n_params("linear", n), variance=var
        )

    if labels is None:
        labels = tuple(dict.fromkeys(y))
    labels = tuple(labels)
    index = {l: i for i, l in enumerate(labels)}
    try:
        yi = np.array([index[v] for v in y], dtype=int)
    except KeyError as exc:
        raise TypeMismatch(f"target value {exc.args[0]!r} not among labels {labels}") from None
    d = len(labels)

    if kind == "discrete" or n == 0:
        counts = np.bincount(yi, weights=wn, minlength=d)
        probs = (counts + LAPLACE_ALPHA) / (1.0 + LAPLACE_ALPHA * d)
        dist = Discrete(labels, tuple(float(p) for p in probs))
        ll = float(w_orig @ np.log(probs[yi]))
        return FitResult("discrete", dist, None, ll, n_params("discrete", 0, d), labels=labels)

    if kind == "logistic" or (kind == "softmax" and d == 2):
        if d != 2:
            raise DistributionError("logistic leaves need exactly two labels")
        beta, info = _newton(_LogisticObjective(X, (yi == 0).astype(float), wn))
        model = Logistic(tuple(float(b) for b in beta))
        ll = float(w_orig @ _logistic_loglik_terms(beta, X, (yi == 0).astype(float)))
        return FitResult("logistic", None, model, ll, n_params("logistic", n), labels=labels, extra=info)

    if kind == "softmax":
        theta, info = _newton(_SoftmaxObjective(X, yi, wn, d))
        W = theta.reshape(d, n + 1)
        model = Softmax(tuple(tuple(float(v) for v in row) for row in W))
        ll = float(w_orig @ _softmax_loglik_terms(W, X, yi))
        return FitResult("softmax", None, model, ll, n_params("softmax", n, d), labels=labels, extra=info)

    raise ValueError(f"unknown leaf kind {kind!r}")


def _weighted_least_squares(X, y, wn) -> np.ndarray:
    """Weighted least squares; intercept is the last entry.

    Columns are centred at their weighted mean for conditioning.  A ridge
    damping (intercept undamped) is added only when the centred design is
    rank deficient, so well-posed fits are the exact WLS solution.
    """
    n = X.shape[1]
    s = np.sqrt(wn)
    mu, ybar = wn @ X, wn @ y
    A = (X - mu) * s[:, None]
    b = (y - ybar) * s
    if np.linalg.matrix_rank(A) < n:
        A = np.vstack([A, np.sqrt(RIDGE) * np.eye(n)])
        b = np.concatenate([b, np.zeros(n)])
    beta, *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.concatenate([beta, [ybar - mu @ beta]])


def _logistic_loglik_terms(beta, X, t):
    z = X @ beta[:-1] + beta[-1]
    return t * log_expit(z) + (1 - t) * log_expit(-z)


def _softmax_loglik_terms(W, X, yi):
    Z = X @ W[:, :-1].T + W[:, -1]
    return Z[np.arange(len(yi)), yi] - logsumexp(Z, axis=1)


class _LogisticObjective:
    """Penalized weighted log-likelihood of a logistic model (to maximize)."""

    def __init__(self, X, t, wn):
        self.X, self.t, self.wn = X, t, wn
        self.A = np.hstack([X, np.ones((X.shape[0], 1))])
        self.mask = np.ones(self.A.shape[1])
        self.mask[-1] = 0.0  # intercept is not damped
        self.size = self.A.shape[1]

    def value(self, b):
        return float(self.wn @ _logistic_loglik_terms(b, self.X, self.t)) - RIDGE * float(self.mask @ b**2)

    def gradient(self, b):
        p = expit(self.A @ b)
        return self.A.T @ (self.wn * (self.t - p)) - 2 * RIDGE * self.mask * b

    def hessian(self, b):
        p = expit(self.A @ b)
        s = self.wn * p * (1 - p)
        return -(self.A.T * s) @ self.A - 2 * RIDGE * np.diag(self.mask)


class _SoftmaxObjective:
    """Penalized weighted log-likelihood of a softmax model (to maximize).

    Every weight, intercepts included, is damped: the softmax is invariant
    to adding a constant row, and the damping picks the minimum-norm member.
    """

    def __init__(self, X, yi, wn, d):
        self.X, self.yi, self.wn, self.d = X, yi, wn, d
        self.A = np.hstack([X, np.ones((X.shape[0], 1))])
        self.Y = np.eye(d)[yi]
        self.size = d * self.A.shape[1]

    def _probs(self, theta):
        Z = self.A @ theta.reshape(self.d, -1).T
        return np.exp(Z - logsumexp(Z, axis=1, keepdims=True))

    def value(self, theta):
        W = theta.reshape(self.d, -1)
        return float(self.wn @ _softmax_loglik_terms(W, self.X, self.yi)) - RIDGE * float(theta @ theta)

    def gradient(self, theta):
        P = self._probs(theta)
        G = ((self.Y - P) * self.wn[:, None]).T @ self.A
        return G.ravel() - 2 * RIDGE * theta

    def hessian(self, theta):
        P = self._probs(theta)
        m = self.A.shape[1]
        H = np.zeros((self.d, m, self.d, m))
        Aw = self.A * self.wn[:, None]
        for k in range(self.d):
            for l in range(k, self.d):
                c = P[:, k] * ((k == l) - P[:, l])
                block = -(Aw * c[:, None]).T @ self.A
                H[k, :, l, :] = block
                H[l, :, k, :] = block.T
        H = H.reshape(self.size, self.size)
        return H - 2 * RIDGE * np.eye(self.size)


def _newton(obj) -> tuple[np.ndarray, dict]:
    """Damped Newton ascent on a concave objective.

    Features are standardized internally; the optimum is mapped back so the
    returned weights apply to the raw features.
    """
    X = obj.X
    n = X.shape[1]
    mu = X.mean(axis=0) if X.shape[0] else np.zeros(n)
    sd = X.std(axis=0) if X.shape[0] else np.ones(n)
    sd = np.where(sd > 0, sd, 1.0)
    m = n + 1
    blocks = obj.size // m
    # raw weights b relate to standardized weights c by b_j = c_j / sd_j, b_0 = c_0 - sum c_j mu_j / sd_j
    T = np.zeros((m, m))
    T[:n, :n] = np.diag(1.0 / sd)
    T[n, :n] = -mu / sd
    T[n, n] = 1.0
    Tfull = np.kron(np.eye(blocks), T)

    def to_raw(c):
        return Tfull @ c

    c = np.zeros(obj.size)
    f = obj.value(to_raw(c))
    it = 0
    gnorm = math.inf
    for it in range(1, MAX_ITER + 1):
        b = to_raw(c)
        g = Tfull.T @ obj.gradient(b)
        gnorm = float(np.linalg.norm(g, np.inf))
        if gnorm <= GRAD_TOL:
            break
        H = Tfull.T @ obj.hessian(b) @ Tfull
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            step = g
        if not np.all(np.isfinite(step)) or g @ step <= 0:
            step = g
        t = 1.0
        while t > 1e-12:
            c_new = c + t * step
            f_new = obj.value(to_raw(c_new))
            if f_new >= f - 1e-15 * abs(f):
                break
            t *= 0.5
        c, f = c_new, f_new
    b = to_raw(c)
    return b, {"iterations": it, "grad_norm": float(np.linalg.norm(obj.gradient(b), np.inf)), "objective": f}


def logistic_objective(weights, X, y_is_first, w):
    """Penalized objective and gradient of the logistic fit at ``weights``.

    Exposed so tests can compare the analytic gradient with finite
    differences.  ``y_is_first`` marks examples whose label is the first.
    """
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    obj = _LogisticObjective(X, np.asarray(y_is_first, dtype=float), w / w.sum())
    b = np.asarray(weights, dtype=float)
    return obj.value(b), obj.gradient(b)


def softmax_objective(rows, X, yi, w):
    """Penalized objective and gradient of the softmax fit (flattened rows)."""
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    rows = np.asarray(rows, dtype=float)
    obj = _SoftmaxObjective(X, np.asarray(yi, dtype=int), w / w.sum(), rows.shape[0])
    theta = rows.ravel()
    return obj.value(theta), obj.gradient(theta)
