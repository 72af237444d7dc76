import math

import numpy as np
import pytest

from relcomplete.distributions import fit_weighted_mle
from relcomplete.engine.core import Engine, World
from relcomplete.errors import NoExamples
from relcomplete.learner import (
    FAIL,
    DLT,
    LearnParams,
    Leaf,
    Node,
    Records,
    TrainingSet,
    dlt_to_clauses,
    fit_leaf,
    induce_dlt,
    learn_jmp,
    partition,
    refinements,
    score_clause,
    score_refinement,
    training_program,
    tree_shape,
)
from relcomplete.relational import BiasSpec, Transformed, parse_bias, transform_tables
from relcomplete.synthetic import bank_bias, bank_data, mask_mcar
from relcomplete.syntax.printer import format_clause, format_program
from relcomplete.syntax.program import Clause, DistClause
from relcomplete.syntax.terms import Var, struct
from relcomplete.syntax.validate import validate_program

from test_distributions import FOUR_W, FOUR_X, FOUR_Y

TOY_BIAS = """
type(item(i)).  type(b(i)).  type(c(i)).  type(y(i)).
rand(b, discrete, [u, v]).
rand(c, continuous, []).
rand(y, continuous, []).
rank([b, c, y]).
mode(y, none, b(+)).
mode(y, none, c(+)).
"""


def toy_data(n, seed, shift=0.0, slope=0.0, missing_b=0.0):
    """Single-table data: y ~ N(shift * [b = v] + slope * c, 1)."""
    rng = np.random.default_rng(seed)
    r_db, a_db = [], []
    for i in range(n):
        k = f"i{i}"
        r_db.append(Clause(struct("item", k)))
        b = "v" if rng.random() < 0.5 else "u"
        c = float(rng.normal())
        y = float(rng.normal(shift * (b == "v") + slope * c, 1.0))
        if rng.random() >= missing_b:
            a_db.append(DistClause(struct("b", k), struct("val", b)))
        a_db.append(DistClause(struct("c", k), struct("val", c)))
        a_db.append(DistClause(struct("y", k), struct("val", y)))
    return Transformed(tuple(r_db), tuple(a_db), (), ())


def toy_tree(data, params=None, bias=None):
    bias = bias or parse_bias(TOY_BIAS)
    ts = TrainingSet(training_program(data, bias), bias, None, 0)
    return induce_dlt("y", ts, params or LearnParams(), rank=bias.rank)


def leaves(node):
    if isinstance(node, Leaf):
        return [node]
    return [l for _, c in node.children for l in leaves(c)]


class TestRefinements:
    def test_age_fig2(self, read_fixture):
        bias = parse_bias(read_fixture("bank_bias.dc"))
        texts = {str(r) for r in refinements("age", bias)}
        assert "avg(X1,(hasAcc(T,A1_1), savings(A1_1) ~= X1),R1)" in texts
        assert "creditScore(T) ~= V1" in texts
        assert "mod(X1,(hasAcc(T,A1_1), freq(A1_1) ~= X1),R1)" in texts

    def test_no_modes(self, read_fixture):
        bias = parse_bias(read_fixture("bank_bias.dc"))
        assert refinements("savings", bias) == []

    def test_path_excludes_used(self, read_fixture):
        bias = parse_bias(read_fixture("bank_bias.dc"))
        refs = refinements("age", bias)
        rest = refinements("age", bias, path=(refs[0],))
        assert len(rest) == len(refs) - 1 and refs[0] not in rest

    def test_rank_filter(self):
        bias = bank_bias()
        attrs = {r.attribute for r in refinements("creditScore", bias, rank=bias.rank)}
        assert attrs == {"freq", "savings"}
        assert refinements("freq", bias, rank=bias.rank) == []

    def test_unbindable_input_excluded(self, read_fixture):
        # a mode whose + argument has a type no variable carries
        bias = parse_bias(read_fixture("bank_bias.dc"))
        from relcomplete.relational import ModeDecl, ModeLiteral

        bad = ModeDecl("age", "max", (ModeLiteral("hasLoan", ("+", "-")),), ModeLiteral("savings", ("+",)))
        b2 = BiasSpec(bias.types, (bad,), bias.rands, bias.rank, bias.background)
        assert refinements("age", b2) == []

    def test_numeric_aggregate_needs_continuous(self):
        bias = bank_bias()
        for r in refinements("status", bias):
            assert r.continuous


class TestScores:
    def test_gaussian_penalty(self):
        fit = fit_weighted_mle("gaussian", None, [1.0, 2.0, 3.0, 4.0], [1.0] * 4)
        assert score_clause(fit, 4) == pytest.approx(2 * fit.loglik - 2 * math.log(4), abs=1e-12)

    def test_discrete_penalty(self):
        labels = ("a", "b", "c")
        fit = fit_weighted_mle("discrete", None, list("aabbbccccc"), [1.0] * 10, labels=labels)
        assert 2 * fit.loglik - score_clause(fit, 10) == pytest.approx(2 * math.log(10), abs=1e-12)

    def test_four_record_savings_fit(self):
        recs = Records(
            np.array([0, 0, 1, 2]), np.array([0, 1, 0, 0]), np.array(FOUR_X), FOUR_Y, np.array(FOUR_W)
        )
        fit, score = fit_leaf(recs, continuous=True)
        direct = fit_weighted_mle("linear", FOUR_X, FOUR_Y, FOUR_W)
        const = fit_weighted_mle("gaussian", None, FOUR_Y, FOUR_W)
        best = max(score_clause(direct, 3), score_clause(const, 3))
        assert score == pytest.approx(best, abs=1e-9)

    def test_complete_data_uses_unit_weights(self):
        recs = Records(np.arange(4), np.zeros(4, int), np.zeros((4, 0)), [1.0, 2.0, 3.0, 10.0], np.array([1, 1, 1, 0.0]))
        fit, _ = fit_leaf(recs, continuous=True, complete_data=True)
        assert fit.dist.mean == pytest.approx(4.0)

    def test_additivity(self):
        data = toy_data(200, 3, shift=2.0)
        bias = parse_bias(TOY_BIAS)
        ts = TrainingSet(training_program(data, bias), bias)
        keys = ts.entities("item")
        ys = [v[0] for v in ts.target_values("y", keys)]
        recs = Records(np.arange(len(ys)), np.zeros(len(ys), int), np.zeros((len(ys), 0)), ys, np.ones(len(ys)))
        ref = [r for r in refinements("y", bias, rank=bias.rank) if r.attribute == "b"][0]
        outcomes = ts.outcomes(ref, keys)
        parent, _ = fit_leaf(recs, True)
        split = score_refinement(recs, ref, outcomes, parent, True, (), LearnParams())
        total = sum(fit_leaf(sub, True)[1] for _, sub, _ in partition(recs, ref, outcomes) if len(sub))
        assert split.score == pytest.approx(total, abs=1e-9)
        # the fail branch is empty and contributes nothing
        assert [len(sub) for b, sub, _ in split.branches if b == FAIL] == [0]

    def test_always_failing_test(self):
        data = toy_data(100, 4, missing_b=1.0)
        bias = parse_bias(TOY_BIAS)
        ts = TrainingSet(training_program(data, bias), bias)
        keys = ts.entities("item")
        ys = [v[0] for v in ts.target_values("y", keys)]
        recs = Records(np.arange(len(ys)), np.zeros(len(ys), int), np.zeros((len(ys), 0)), ys, np.ones(len(ys)))
        ref = [r for r in refinements("y", bias, rank=bias.rank) if r.attribute == "b"][0]
        parent, leaf_score = fit_leaf(recs, True)
        split = score_refinement(recs, ref, ts.outcomes(ref, keys), parent, True, (), LearnParams())
        assert split.score == pytest.approx(leaf_score, abs=1e-9)

    def test_shift_split_beats_leaf(self):
        wins = 0
        for seed in range(10):
            t = toy_tree(toy_data(500, seed, shift=5.0))
            if isinstance(t.root, Node) and t.root.refinement.attribute == "b":
                assert t.root.score > t.root.leaf_score
                wins += 1
        assert wins >= 9


class TestInduction:
    def test_pure_noise_single_leaf(self):
        # one useless binary parent: a spurious split needs a chance gain beyond the BIC penalty
        bias = parse_bias(TOY_BIAS.replace("mode(y, none, c(+)).", ""))
        single = sum(isinstance(toy_tree(toy_data(200, s), bias=bias).root, Leaf) for s in range(100))
        assert single >= 90

    def test_noise_split_rate(self):
        # two useless candidates: each adds a few percent chance of a spurious split
        single = sum(isinstance(toy_tree(toy_data(200, s)).root, Leaf) for s in range(100))
        assert single >= 85

    def test_linear_leaf(self):
        t = toy_tree(toy_data(300, 1, slope=3.0))
        assert tree_shape(t.root) == ("c", "none", ((("success",), "linear"), (("fail",), "gaussian")))
        fit = t.root.children[0][1].fit
        assert fit.model.weights[0] == pytest.approx(3.0, abs=0.2)

    def test_missing_parents_fail_branch(self):
        t = toy_tree(toy_data(400, 2, shift=5.0, missing_b=0.3))
        assert t.root.refinement.attribute == "b"
        branches = [b for b, _ in t.root.children]
        assert FAIL in branches
        fail_leaf = dict(t.root.children)[FAIL]
        assert fail_leaf.n_examples > 50

    def test_all_parents_missing(self):
        bias = parse_bias(TOY_BIAS.replace("mode(y, none, c(+)).", ""))
        t = toy_tree(toy_data(100, 2, shift=5.0, missing_b=1.0), bias=bias)
        assert isinstance(t.root, Leaf)

    def test_no_examples(self):
        data = toy_data(20, 0)
        data = Transformed(data.r_db, tuple(c for c in data.a_db if c.head.functor != "y"), (), ())
        bias = parse_bias(TOY_BIAS)
        with pytest.raises(NoExamples):
            induce_dlt("y", TrainingSet(training_program(data, bias), bias), LearnParams())

    def test_epsilon_blocks_split(self):
        t = toy_tree(toy_data(300, 0, shift=0.5), LearnParams(epsilon=1e9))
        assert isinstance(t.root, Leaf)

    def test_max_depth_zero(self):
        t = toy_tree(toy_data(300, 0, shift=5.0), LearnParams(max_depth=0))
        assert isinstance(t.root, Leaf)

    def test_complete_data_equivalence(self):
        data = toy_data(300, 5, shift=3.0, slope=1.0)
        a = toy_tree(data, LearnParams())
        b = toy_tree(data, LearnParams(complete_data=True))
        assert [format_clause(c) for c in dlt_to_clauses(a)] == [format_clause(c) for c in dlt_to_clauses(b)]


class TestClauses:
    def test_single_leaf_clause(self):
        fit = fit_weighted_mle("gaussian", None, [30.0, 40.0], [1.0, 1.0])
        t = DLT("age", "client", Var("C"), True, (), Leaf(fit, (), 2, 0.0))
        (c,) = dlt_to_clauses(t)
        assert format_clause(c) == "age(C) ~ gaussian(35,25) := client(C)."

    def test_clause_count_equals_leaf_count(self):
        t = toy_tree(toy_data(400, 2, shift=5.0, slope=2.0, missing_b=0.3))
        assert len(dlt_to_clauses(t)) == len(leaves(t.root))

    def test_learned_clauses_validate(self):
        t = toy_tree(toy_data(400, 2, shift=5.0, slope=2.0, missing_b=0.3))
        data = toy_data(5, 0)
        from relcomplete.syntax.program import Program

        p = Program(tuple(dlt_to_clauses(t)) + data.r_db)
        assert not [d for d in validate_program(p) if d.severity == "error"]


def exclusive_and_exhaustive(clauses, program, attribute, keys, rng):
    """Exactly one learned body succeeds per entity, evaluated against ``program``."""
    eng = Engine(program)
    clauses = [c for c in clauses if c.attribute == attribute and c.body]
    for k in keys:
        world = World(rng)
        hits = 0
        for c in clauses:
            head = c.head.args[0]
            if eng.prove(c.body, world, {head: k}) is not None:
                hits += 1
        assert hits == 1, (attribute, k, hits)


@pytest.fixture(scope="module")
def bank_model():
    b = bank_data(300, 7)
    b, _ = mask_mcar(b, 0.3, np.random.default_rng(7))
    data = transform_tables(b)
    return data, learn_jmp(data, bank_bias(), LearnParams(seed=7))


class TestJointModel:
    def test_every_attribute_defined(self, bank_model):
        _, jmp = bank_model
        attrs = {c.attribute for c in jmp.program.dist_clauses}
        assert attrs == set(bank_bias().rank)

    def test_validates(self, bank_model):
        _, jmp = bank_model
        assert not [d for d in validate_program(jmp.program) if d.severity == "error"]

    def test_mutually_exclusive(self, bank_model):
        data, jmp = bank_model
        # bodies evaluated in sampled worlds of the model and against the partial training data
        learned = jmp.program.dist_clauses
        train = data.program()
        rng = np.random.default_rng(0)
        ents = {"freq": "account", "savings": "account", "creditScore": "client", "age": "client", "loanAmt": "loan", "status": "loan"}
        for attr, ent in ents.items():
            keys = [c.head.args[0] for c in data.r_db if c.head.functor == ent][:40]
            exclusive_and_exhaustive(learned, jmp.program, attr, keys, rng)
            exclusive_and_exhaustive(learned, train, attr, keys, rng)

    def test_deterministic(self, bank_model):
        data, jmp = bank_model
        again = learn_jmp(data, bank_bias(), LearnParams(seed=7))
        assert format_program(again.program) == format_program(jmp.program)

    def test_savings_roots_on_freq(self):
        data = transform_tables(bank_data(300, 3))
        jmp = learn_jmp(data, bank_bias())
        root = jmp.trees["savings"].root
        assert isinstance(root, Node) and root.refinement.attribute == "freq"

    def test_rank_permutation_validates(self):
        data = toy_data(200, 1, shift=3.0)
        for rank in ("[b, c, y]", "[y, c, b]", "[c, y, b]"):
            bias = parse_bias(TOY_BIAS.replace("[b, c, y]", rank))
            jmp = learn_jmp(data, bias)
            assert not [d for d in validate_program(jmp.program) if d.severity == "error"]

    def test_no_observed_cells_prior_leaf(self):
        data = toy_data(50, 0)
        data = Transformed(data.r_db, tuple(c for c in data.a_db if c.head.functor != "b"), (), ())
        jmp = learn_jmp(data, parse_bias(TOY_BIAS))
        (c,) = [c for c in jmp.program.dist_clauses if c.attribute == "b"]
        assert format_clause(c) == "b(I) ~ discrete([0.5:u,0.5:v]) := item(I)."
