import copy
import math

import numpy as np
import pytest

from relcomplete.em import (
    e_step,
    e_step_sample,
    imputation_facts,
    m_step_relearn,
    partition_blocks,
    run_stochastic_em,
    trace_csv,
)
from relcomplete.engine import Engine
from relcomplete.engine.relevance import dependency_graph
from relcomplete.errors import ZeroEvidenceWeight
from relcomplete.learner.dlt import LearnParams
from relcomplete.learner.jmp import learn_jmp
from relcomplete.relational import CellRef, transform_tables
from relcomplete.synthetic import bank_bias, bank_data, mask_mcar, observed_values
from relcomplete.syntax.parser import parse_program, parse_term
from relcomplete.syntax.printer import format_clause

from exact import CHAIN_DC, chain_network


def rv(text):
    return parse_term(text)


def strs(d):
    return {str(k): v for k, v in d.items()}


@pytest.fixture(scope="module")
def chain():
    return Engine(parse_program(CHAIN_DC)), chain_network()


class TestBlocks:
    def test_moral_components(self, chain):
        eng, _ = chain
        observed = {rv("freq(a1)"): "low", rv("amt(l1)"): "hi", rv("st(l1)"): "appr"}
        blocks, direct = partition_blocks(dependency_graph(eng), observed)
        latent = sorted(tuple(map(str, b.latent)) for b in blocks)
        assert latent == [("freq(a2)", "sav(a2)"), ("sav(a1)",)]
        (b1,) = [b for b in blocks if str(b.latent[0]) == "sav(a1)"]
        assert strs(b1.children) == {"amt(l1)": "hi"}
        assert strs(b1.fixed) == {"freq(a1)": "low"}
        assert set(map(str, direct)) == {"freq(a1)", "st(l1)"}

    def test_co_parents_share_block(self):
        eng = Engine(parse_program("a ~ discrete([0.5:t,0.5:f]). b ~ discrete([0.5:t,0.5:f]).\n"
                                   "c ~ val(1) := a ~= t, b ~= t.\nc ~ val(0) := \\+ (a ~= t, b ~= t)."))
        blocks, _ = partition_blocks(dependency_graph(eng), {rv("c"): 1})
        assert [tuple(map(str, b.latent)) for b in blocks] == [("a", "b")]


class TestEStep:
    def test_single_cell_matches_enumeration(self, chain):
        eng, net = chain
        observed = {rv("freq(a1)"): "low", rv("amt(l1)"): "hi", rv("st(l1)"): "appr"}
        rng = np.random.default_rng(0)
        reps = 10000
        hits = sum(e_step_sample(eng, observed, [rv("sav(a1)")], 50, rng)[rv("sav(a1)")] == "small" for _ in range(reps))
        expected = net.conditional({"sav(a1)": "small"}, strs(observed))
        assert hits / reps == pytest.approx(expected, abs=0.02)

    def test_joint_block_matches_enumeration(self, chain):
        eng, net = chain
        observed = {rv("amt(l1)"): "hi", rv("st(l1)"): "decl", rv("freq(a2)"): "high"}
        missing = [rv("freq(a1)"), rv("sav(a1)"), rv("sav(a2)")]
        rng = np.random.default_rng(1)
        reps = 4000
        counts = {}
        for _ in range(reps):
            z = e_step_sample(eng, observed, missing, 50, rng)
            key = (z[rv("freq(a1)")], z[rv("sav(a1)")])
            counts[key] = counts.get(key, 0) + 1
        for f in ("low", "high"):
            for s in ("small", "big"):
                expected = net.conditional({"freq(a1)": f, "sav(a1)": s}, strs(observed))
                assert counts.get((f, s), 0) / reps == pytest.approx(expected, abs=0.025)

    def test_loglik_is_unbiased_in_probability(self, chain):
        eng, net = chain
        observed = {rv("freq(a1)"): "low", rv("amt(l1)"): "hi", rv("st(l1)"): "appr"}
        rng = np.random.default_rng(2)
        est = [math.exp(e_step(eng, observed, [rv("sav(a1)")], 20, rng).loglik) for _ in range(2000)]
        assert np.mean(est) == pytest.approx(net.conditional(strs(observed), {}), rel=0.02)

    def test_fully_observed_loglik_is_exact(self, chain):
        eng, net = chain
        observed = {rv(n): v for n, v in [("freq(a1)", "low"), ("sav(a1)", "big"), ("amt(l1)", "hi"),
                                          ("st(l1)", "appr"), ("freq(a2)", "high"), ("sav(a2)", "small")]}
        step = e_step(eng, observed, [], 10, np.random.default_rng(0))
        assert step.imputation == {}
        assert step.loglik == pytest.approx(math.log(net.conditional(strs(observed), {})), abs=1e-12)

    def test_deterministic_child_pins_parent(self):
        eng = Engine(parse_program("item(i1).\nx(I) ~ discrete([0.5:a,0.5:b]) := item(I).\n"
                                   "y(I) ~ val(1) := item(I), x(I) ~= a.\ny(I) ~ val(2) := item(I), x(I) ~= b."))
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert e_step_sample(eng, {rv("y(i1)"): 2.0}, [rv("x(i1)")], 10, rng) == {rv("x(i1)"): "b"}

    def test_impossible_evidence(self):
        eng = Engine(parse_program("x ~ discrete([0.5:a,0.5:b]).\ny ~ val(1) := x ~= a.\ny ~ val(2) := x ~= b."))
        with pytest.raises(ZeroEvidenceWeight):
            e_step(eng, {rv("y"): 3.0}, [rv("x")], 4, np.random.default_rng(0))

    def test_no_missing(self, chain):
        assert e_step_sample(chain[0], {rv("freq(a1)"): "low"}, []) == {}


@pytest.fixture(scope="module")
def bank_partial():
    b = bank_data(60, 11)
    b, _ = mask_mcar(b, 0.2, np.random.default_rng(11))
    return transform_tables(b)


class TestLoop:
    def test_trace_and_imputation(self, bank_partial):
        before = copy.deepcopy(bank_partial)
        res = run_stochastic_em(bank_partial, bank_bias(), iters=2, k=20, seed=0)
        assert [i for i, _ in res.trace] == [0, 1, 2]
        assert all(math.isfinite(ll) for _, ll in res.trace)
        cells = {c.rv for c in (*bank_partial.missing, *bank_partial.queries)}
        assert set(res.imputation) == cells
        rands = bank_bias().rands
        for cell, v in res.imputation.items():
            decl = rands[cell.functor]
            assert isinstance(v, float) if decl.continuous else v in decl.domain
        # the imputation never leaks into the data
        assert bank_partial == before

    def test_zero_iterations_is_bootstrap(self, bank_partial):
        res = run_stochastic_em(bank_partial, bank_bias(), iters=0, k=10, seed=0)
        boot = learn_jmp(bank_partial, bank_bias(), LearnParams(seed=0))
        assert len(res.trace) == 1 and res.imputation == {}
        assert [format_clause(c) for c in res.model.program.items] == [format_clause(c) for c in boot.program.items]

    def test_seeded(self, bank_partial):
        a = run_stochastic_em(bank_partial, bank_bias(), iters=1, k=10, seed=4)
        b = run_stochastic_em(bank_partial, bank_bias(), iters=1, k=10, seed=4)
        assert a.trace == b.trace and a.imputation == b.imputation

    def test_complete_data_equals_plain_learning(self):
        data = transform_tables(bank_data(40, 5))
        res = run_stochastic_em(data, bank_bias(), iters=2, k=10, seed=0)
        plain = learn_jmp(data, bank_bias(), LearnParams(seed=0))
        assert [format_clause(c) for c in res.model.program.items] == [format_clause(c) for c in plain.program.items]
        lls = [ll for _, ll in res.trace]
        assert lls[0] == lls[1] == lls[2]

    def test_fully_missing_attribute(self):
        b = bank_data(40, 6)
        b, _ = mask_mcar(b, 1.0, np.random.default_rng(0), attributes=["status"])
        data = transform_tables(b)
        res = run_stochastic_em(data, bank_bias(), iters=1, k=10, seed=0)
        status = {c.rv for c in data.missing if c.attribute == "status"}
        assert status and status <= set(res.imputation)
        assert {res.imputation[c] for c in status} <= {"appr", "pend", "decl"}

    def test_m_step_uses_imputed_cells(self, bank_partial):
        ref = next(c for c in bank_partial.missing if c.attribute == "savings")
        facts = imputation_facts({ref.rv: 1234.5})
        assert format_clause(facts[0]) == f"savings({ref.key}) ~ val(1234.5)."
        jmp = m_step_relearn(bank_partial, {}, bank_bias(), LearnParams(seed=0))
        assert "savings" in jmp.trees

    def test_trace_csv(self):
        assert trace_csv([(0, -1.5), (1, -1.25)]) == "iteration,loglik\n0,-1.5\n1,-1.25\n"

    def test_negative_iterations(self, bank_partial):
        with pytest.raises(ValueError):
            run_stochastic_em(bank_partial, bank_bias(), iters=-1)


def test_cellref_rv():
    assert str(CellRef("account", "a_1", "savings").rv) == "savings(a_1)"


def test_true_imputation_matches_complete_learning():
    full = bank_data(60, 12)
    part, hidden = mask_mcar(full, 0.2, np.random.default_rng(12))
    truth = observed_values(full)
    params = LearnParams(seed=0)
    jmp = m_step_relearn(transform_tables(part), {h.rv: truth[h] for h in hidden}, bank_bias(), params)
    ref = learn_jmp(transform_tables(full), bank_bias(), LearnParams(seed=0, complete_data=True))
    model = [format_clause(c) for c in jmp.program.items if c.head.functor in bank_bias().rands]
    expected = [format_clause(c) for c in ref.program.items if c.head.functor in bank_bias().rands]
    assert model == expected
