import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from relcomplete.engine import Engine, log_conditional_density, requisite_evidence
from relcomplete.errors import EmptyInput, SingleClass, ZeroRange
from relcomplete.evaluation import (
    PredictionRecord,
    auc_total,
    binary_auc,
    evaluate_predictions,
    metrics_csv,
    nrmse,
    predict_cells,
    total_wpll,
    wpll,
)
from relcomplete.syntax.parser import parse_program, parse_term

from exact import QUERY_CASES


def rv(text):
    return parse_term(text)


def pairwise_auc(scores, positive):
    """Brute force: fraction of (positive, negative) pairs ranked correctly, ties one half."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return total / (len(pos) * len(neg))


class TestNrmse:
    def test_perfect(self):
        assert nrmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 5.0) == 0.0

    def test_extremes(self):
        assert nrmse([0.0, 0.0], [10.0, 10.0], 10.0) == 1.0

    def test_hand_example(self):
        assert nrmse([1.0, 3.0], [2.0, 2.0], 10.0) == pytest.approx(0.1, abs=1e-15)

    def test_clipped(self):
        assert nrmse([100.0], [0.0], 1.0) == 1.0

    def test_empty(self):
        with pytest.raises(EmptyInput):
            nrmse([], [], 1.0)

    def test_zero_range(self):
        with pytest.raises(ZeroRange):
            nrmse([1.0], [1.0], 0.0)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=1, max_size=20),
        st.floats(0.1, 1000),
        st.floats(1e-3, 1e3),
    )
    def test_scale_invariance(self, pairs, rng_, c):
        p, t = zip(*pairs)
        a = nrmse(p, t, rng_)
        b = nrmse([c * x for x in p], [c * x for x in t], c * rng_)
        assert a == pytest.approx(b, abs=1e-12)


class TestAuc:
    def test_perfect(self):
        scores = [{"a": 0.9, "b": 0.1}, {"a": 0.8, "b": 0.2}, {"a": 0.1, "b": 0.9}]
        assert auc_total(scores, ["a", "a", "b"]) == 1.0

    def test_constant_scores(self):
        scores = [{"a": 0.5, "b": 0.5}] * 4
        assert auc_total(scores, ["a", "b", "a", "b"]) == 0.5

    def test_single_class(self):
        with pytest.raises(SingleClass):
            auc_total([{"a": 1.0}, {"a": 0.3}], ["a", "a"])

    def test_three_class_hand_example(self):
        labels = ["x", "y", "z"]
        truths = ["x", "y", "z", "x", "y", "x"]
        raw = [(0.6, 0.3, 0.1), (0.2, 0.5, 0.3), (0.3, 0.3, 0.4), (0.3, 0.4, 0.3), (0.4, 0.4, 0.2), (0.5, 0.1, 0.4)]
        scores = [dict(zip(labels, r)) for r in raw]
        expected = 0.0
        for c in labels:
            pos = [t == c for t in truths]
            expected += sum(pos) / len(truths) * pairwise_auc([s[c] for s in scores], pos)
        assert auc_total(scores, truths, labels) == pytest.approx(expected, abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=30))
    def test_binary_matches_pairwise(self, items):
        s, pos = zip(*items)
        if all(pos) or not any(pos):
            return
        assert binary_auc(s, pos) == pytest.approx(pairwise_auc(s, pos), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(-50, 50), st.sampled_from("abc")), min_size=3, max_size=25))
    def test_monotone_invariance(self, items):
        truths = [t for _, t in items]
        if len(set(truths)) < 2:
            return
        # scores on a grid so the warp cannot merge distinct values in floating point
        scores = [{"a": x / 10, "b": -x / 10, "c": (x / 10) ** 2} for x, _ in items]
        warped = [{k: math.atan(v) * 3 + 1 for k, v in s.items()} for s in scores]
        assert auc_total(scores, truths) == pytest.approx(auc_total(warped, truths), abs=1e-12)


COIN_DC = """
item(i1). item(i2). item(i3). item(i4).
c(I) ~ discrete([0.5:h, 0.5:t]) := item(I).
"""

CONJUGATE_DC = """
item(i1).
x(I) ~ gaussian(0, 1) := item(I).
y(I) ~ gaussian(Mean, 0.5) := item(I), x(I) ~= X, linear([X], [2, 0], Mean).
"""

MIXTURE_DC = """
item(i1). item(i2). item(i3).
z(I) ~ discrete([0.3:a, 0.7:b]) := item(I).
x(I) ~ gaussian(0, 1) := item(I), z(I) ~= a.
x(I) ~ gaussian(3, 1) := item(I), z(I) ~= b.
"""


class TestWpll:
    def test_uniform_two_labels(self):
        eng = Engine(parse_program(COIN_DC))
        ev = {rv("c(i1)"): "h", rv("c(i2)"): "t", rv("c(i3)"): "t", rv("c(i4)"): "h"}
        assert wpll(eng, ev, "c", 20000, np.random.default_rng(0)) == pytest.approx(math.log(0.5), abs=1e-12)
        sampled = wpll(eng, ev, "c", 20000, np.random.default_rng(0), exact=False)
        assert sampled == pytest.approx(math.log(0.5), abs=0.02)

    def test_val_facts_score_zero(self):
        eng = Engine(parse_program("a(x) ~ val(3.5). b(x) ~ val(red)."))
        ev = {rv("a(x)"): 3.5, rv("b(x)"): "red"}
        rng = np.random.default_rng(0)
        assert wpll(eng, ev, "a", 100, rng) == 0.0
        assert wpll(eng, ev, "b", 100, rng) == 0.0

    def test_empty(self):
        with pytest.raises(EmptyInput):
            wpll(Engine(parse_program(COIN_DC)), {}, "c", 10, np.random.default_rng(0))

    def test_conjugate_gaussian_exact(self):
        # x | y is Gaussian with precision 1 + 4/0.5 and mean (2 y / 0.5) / precision
        eng = Engine(parse_program(CONJUGATE_DC))
        x, y = 0.7, 1.1
        ev = {rv("x(i1)"): x, rv("y(i1)"): y}
        prec = 1.0 + 4.0 / 0.5
        expected = norm.logpdf(x, (2.0 * y / 0.5) / prec, math.sqrt(1.0 / prec))
        assert wpll(eng, ev, "x", 10, np.random.default_rng(0)) == pytest.approx(expected, abs=1e-6)
        # y has no children: its own density given x
        assert wpll(eng, ev, "y", 10, np.random.default_rng(0)) == pytest.approx(
            norm.logpdf(y, 2 * x, math.sqrt(0.5)), abs=1e-12
        )

    def test_mixture_density(self):
        eng = Engine(parse_program(MIXTURE_DC))
        xs = {"i1": -0.4, "i2": 1.5, "i3": 3.2}
        ev = {rv(f"x({k})"): v for k, v in xs.items()}
        expected = np.mean([math.log(0.3 * norm.pdf(v) + 0.7 * norm.pdf(v, 3)) for v in xs.values()])
        assert wpll(eng, ev, "x", 20000, np.random.default_rng(1)) == pytest.approx(expected, abs=0.02)

    def test_perturbed_program_scores_lower(self):
        rng = np.random.default_rng(3)
        zs = rng.random(60) < 0.7
        xs = np.where(zs, rng.normal(3, 1, 60), rng.normal(0, 1, 60))
        facts = "".join(f"item(i{i}). " for i in range(60))
        ev = {rv(f"x(i{i})"): float(v) for i, v in enumerate(xs)}
        true = parse_program(facts + MIXTURE_DC.split("\n", 2)[2])
        bad = parse_program(facts + MIXTURE_DC.split("\n", 2)[2].replace("gaussian(3, 1)", "gaussian(2, 1)"))
        a = wpll(Engine(true), ev, "x", 3000, np.random.default_rng(0))
        b = wpll(Engine(bad), ev, "x", 3000, np.random.default_rng(0))
        assert b < a

    def test_total(self):
        eng = Engine(parse_program(CONJUGATE_DC))
        ev = {rv("x(i1)"): 0.7, rv("y(i1)"): 1.1}
        out = total_wpll(eng, ev, ["x", "y"], 10, np.random.default_rng(0))
        assert out["total"] == pytest.approx(out["x"] + out["y"], abs=1e-15)

    @pytest.mark.parametrize("case", range(len(QUERY_CASES)))
    def test_exact_path_matches_enumeration(self, case, read_fixture):
        src, net, query, evidence = QUERY_CASES[case]
        if src.endswith(".dc"):
            src = read_fixture(src)
        if len(query) != 1:
            pytest.skip("only single-variable queries")
        ((name, value),) = query.items()
        target = parse_term(name)
        ev = {parse_term(k): v for k, v in evidence.items()}
        eng = Engine(parse_program(src))
        weighted, fixed = requisite_evidence(target, ev, eng)
        got = log_conditional_density(target, value, weighted, eng, 20000, np.random.default_rng(0), fixed=fixed)
        assert math.exp(got) == pytest.approx(net.conditional(query, evidence), abs=0.015)


PRED_DC = """
item(i1). item(i2).
b(I) ~ discrete([0.2:u, 0.8:v]) := item(I).
y(I) ~ gaussian(5, 1) := item(I), b(I) ~= u.
y(I) ~ gaussian(-5, 1) := item(I), b(I) ~= v.
"""


class TestPredictions:
    def test_modes(self):
        eng = Engine(parse_program(PRED_DC))
        ev = {rv("y(i1)"): 4.0, rv("b(i2)"): "v"}
        recs = predict_cells(eng, [rv("b(i1)"), rv("y(i2)")], ev, 4000, np.random.default_rng(0), truths={rv("b(i1)"): "u"})
        assert recs[0].prediction == "u" and recs[0].truth == "u"
        assert recs[1].prediction == pytest.approx(-5.0, abs=0.1)

    def test_evaluate_and_csv(self):
        from relcomplete.engine import Predictive

        recs = [
            PredictionRecord(rv("y(i1)"), 1.0, Predictive(rv("y(i1)"), True, mean=1.0), 1.0),
            PredictionRecord(rv("y(i2)"), 3.0, Predictive(rv("y(i2)"), True, mean=3.0), 3.0),
            PredictionRecord(rv("b(i1)"), "u", Predictive(rv("b(i1)"), False, probs={"u": 0.9, "v": 0.1}), "u"),
            PredictionRecord(rv("b(i2)"), "v", Predictive(rv("b(i2)"), False, probs={"u": 0.2, "v": 0.8}), "v"),
        ]
        rows = evaluate_predictions(recs, {"y": True, "b": False}, {"y": 2.0}, {"b": ("u", "v")})
        assert rows == [("y", "nrmse", 0.0, 2), ("b", "auc_total", 1.0, 2)]
        text = metrics_csv(rows)
        assert text.splitlines() == ["attribute,metric,value,n", "y,nrmse,0.0,2", "b,auc_total,1.0,2"]
