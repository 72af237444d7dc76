"""Predictive metrics: NRMSE, multi-class AUC and weighted pseudo-log-likelihood.

Point predictions are the mode of the predictive distribution of a cell
given the observed cells (the weighted mean for continuous cells).  Sums
over cells use compensated summation so results do not depend on order.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .engine.core import Engine
from .engine.estimate import Predictive, log_conditional_density, predictive
from .engine.relevance import requisite_evidence
from .errors import EmptyInput, SingleClass, ZeroEvidenceWeight, ZeroRange
from .syntax.program import Program


def nrmse(preds: Sequence[float], truths: Sequence[float], value_range: float) -> float:
    """Root-mean-square error divided by the attribute range, clipped to [0, 1]."""
    p = np.asarray(preds, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.size == 0:
        raise EmptyInput("nrmse needs at least one prediction")
    if p.shape != t.shape:
        raise ValueError("predictions and truths are not aligned")
    if not value_range > 0:
        raise ZeroRange(f"attribute range must be positive, got {value_range}")
    rmse = math.sqrt(math.fsum((p - t) ** 2) / p.size)
    return min(1.0, max(0.0, rmse / value_range))


def binary_auc(scores: Sequence[float], positive: Sequence[bool]) -> float:
    """Area under the ROC curve; tied positive/negative pairs count one half."""
    s = np.asarray(scores, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs positive and negative examples")
    ranks = rankdata(s)  # average ranks give ties one half
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_total(scores: Sequence[Mapping], truths: Sequence, labels: Sequence | None = None) -> float:
    """Prevalence-weighted average of the one-vs-rest AUCs of the classes present.

    ``scores[i]`` maps each label to a score for item ``i`` (missing labels
    score 0).  With two classes this is the ordinary AUC.
    """
    if len(scores) == 0:
        raise EmptyInput("auc_total needs at least one prediction")
    if len(scores) != len(truths):
        raise ValueError("scores and truths are not aligned")
    present = list(dict.fromkeys(truths))
    if labels is not None:
        present = [l for l in labels if l in set(truths)]
    if len(present) < 2:
        raise SingleClass("auc_total needs at least two classes among the truths")
    n = len(truths)
    parts = []
    for c in present:
        pos = [t == c for t in truths]
        s = [float(row.get(c, 0.0)) for row in scores]
        parts.append(sum(pos) / n * binary_auc(s, pos))
    return min(1.0, math.fsum(parts))


@dataclass
class PredictionRecord:
    cell: object  # ground random variable
    truth: object
    predictive: Predictive | None
    prediction: object  # mode of the predictive distribution (None if unavailable)


def _engine(p) -> Engine:
    return p if isinstance(p, Engine) else Engine(p)


def predict_cells(
    p: Program | Engine,
    cells: Iterable,
    evidence: Mapping,
    n_samples: int,
    rng: np.random.Generator,
    labels: Sequence | None = None,
    truths: Mapping | None = None,
) -> list[PredictionRecord]:
    """Predictive distribution and point prediction per cell given the evidence.

    Each cell is conditioned on the requisite part of ``evidence`` (its own
    value removed).  A cell whose evidence has zero weight in every sample
    gets no prediction.
    """
    eng = _engine(p)
    truths = truths or {}
    out = []
    for rv in cells:
        ev, fixed = requisite_evidence(rv, {k: v for k, v in evidence.items() if k != rv}, eng)
        try:
            pred = predictive(rv, ev, eng, n_samples, rng, labels=labels, fixed=fixed)
            point = pred.mode if (pred.probs or pred.continuous) else None
        except ZeroEvidenceWeight:
            pred, point = None, None
        out.append(PredictionRecord(rv, truths.get(rv), pred, point))
    return out


def wpll(
    p: Program | Engine,
    evidence: Mapping,
    attribute: str,
    n_samples: int,
    rng: np.random.Generator,
    exact: bool = True,
) -> float:
    """Mean ``ln p(cell = truth | other observed cells)`` over the observed cells of ``attribute``.

    Densities are used for continuous cells.  ``evidence`` holds every
    observed test cell; each cell is scored against the requisite part of
    the remaining ones.
    """
    eng = _engine(p)
    cells = [rv for rv in evidence if rv.functor == attribute]
    if not cells:
        raise EmptyInput(f"no observed {attribute} cells to score")
    terms = []
    for rv in cells:
        ev, fixed = requisite_evidence(rv, evidence, eng)
        terms.append(log_conditional_density(rv, evidence[rv], ev, eng, n_samples, rng, exact=exact, fixed=fixed))
    return math.fsum(terms) / len(terms)


def total_wpll(p: Program | Engine, evidence: Mapping, attributes: Iterable[str], n_samples: int, rng) -> dict:
    """Per-attribute WPLL for every attribute with observed cells, plus ``total``."""
    eng = _engine(p)
    out = {}
    for a in attributes:
        if any(rv.functor == a for rv in evidence):
            out[a] = wpll(eng, evidence, a, n_samples, rng)
    out["total"] = math.fsum(out.values())
    return out


def attribute_range(values: Iterable[float]) -> float:
    v = [float(x) for x in values]
    if not v:
        raise EmptyInput("no values to take a range over")
    return max(v) - min(v)


def evaluate_predictions(
    records: Sequence[PredictionRecord],
    continuous: Mapping[str, bool],
    ranges: Mapping[str, float],
    labels: Mapping[str, Sequence] | None = None,
) -> list[tuple]:
    """``(attribute, metric, value, n)`` rows: NRMSE for continuous, AUC for discrete."""
    labels = labels or {}
    by_attr: dict = {}
    for r in records:
        if r.truth is not None:
            by_attr.setdefault(r.cell.functor, []).append(r)
    rows = []
    for attr, recs in by_attr.items():
        if continuous[attr]:
            ok = [r for r in recs if r.prediction is not None]
            if ok:
                value = nrmse([r.prediction for r in ok], [r.truth for r in ok], ranges[attr])
                rows.append((attr, "nrmse", value, len(ok)))
        else:
            ok = [r for r in recs if r.predictive is not None]
            try:
                value = auc_total([r.predictive.probs for r in ok], [r.truth for r in ok], labels.get(attr))
            except (SingleClass, EmptyInput):
                continue
            rows.append((attr, "auc_total", value, len(ok)))
    return rows


def metrics_csv(rows: Iterable[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["attribute", "metric", "value", "n"])
    for attr, metric, value, n in rows:
        w.writerow([attr, metric, repr(float(value)), int(n)])
    return buf.getvalue()


def write_metrics(rows: Iterable[tuple], path: str | Path) -> None:
    Path(path).write_text(metrics_csv(rows), encoding="utf-8")

