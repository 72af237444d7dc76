"""Joint model programs: one DLT per attribute, learned in rank order."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..distributions import Discrete, FitResult, Gaussian, n_params
from ..errors import NoExamples, ValidityError
from ..relational import BiasSpec, Transformed
from ..syntax.printer import format_clause
from ..syntax.program import Clause, DistClause, Program
from ..syntax.terms import struct
from ..syntax.validate import validate_program
from .dlt import DLT, LearnParams, Leaf, TrainingSet, dlt_to_clauses, head_variable, induce_dlt


@dataclass
class LearnedJMP:
    program: Program  # rank declaration + background rules + learned clauses + R_DB facts
    trees: dict = field(default_factory=dict)  # attribute -> DLT (absent when no examples)
    report: list = field(default_factory=list)


def training_program(data: Transformed, bias: BiasSpec, extra=()) -> Program:
    """R_DB, A_DB, background knowledge and any extra clauses (e.g. imputations)."""
    return Program(tuple(data.r_db) + tuple(data.a_db) + tuple(extra) + tuple(bias.background.items), "<train>")


def model_clauses(p: Program) -> Program:
    """Drop ground facts (the relational skeleton) from a learned program."""
    keep = tuple(
        c
        for c in p.items
        if not (type(c) is Clause and c.is_fact and c.head.functor not in ("rank",))
    )
    return Program(keep, p.source)


def with_database(model: Program, data: Transformed) -> Program:
    """A learned model applied to a (test) database skeleton."""
    return Program(model_clauses(model).items + tuple(data.r_db), model.source)


def _prior_leaf(decl) -> FitResult:
    if decl.continuous:
        return FitResult("gaussian", Gaussian(0.0, 1.0), None, 0.0, n_params("gaussian", 0))
    d = len(decl.domain)
    return FitResult(
        "discrete", Discrete(tuple(decl.domain), (1.0 / d,) * d), None, 0.0, n_params("discrete", 0, d)
    )


def learn_jmp(
    data: Transformed,
    bias: BiasSpec,
    params: LearnParams | None = None,
    extra=(),
    training: TrainingSet | None = None,
) -> LearnedJMP:
    """Learn one DLT per ranked attribute and assemble the program.

    Attributes are learned in rank order and may only test attributes
    ranked below them.  An attribute without a single observed cell gets a
    fixed prior leaf (uniform labels or a standard normal) so that the
    program still defines it.
    """
    params = params or LearnParams()
    if not bias.rank:
        raise ValidityError("learning a joint model program needs a rank declaration")
    if training is None:
        n = 1 if params.complete_data else params.n_proofs
        training = TrainingSet(training_program(data, bias, extra), bias, n, params.seed)
    clauses, trees, report = [], {}, []
    for attr in bias.rank:
        try:
            t = induce_dlt(attr, training, params, rank=bias.rank)
        except NoExamples:
            entity = training.entity_predicate(attr)
            head = head_variable(bias.type_of(attr))
            decl = bias.rands[attr]
            leaf = Leaf(_prior_leaf(decl), (), 0, 0.0)
            t = DLT(attr, entity, head, decl.continuous, tuple(decl.domain), leaf, [f"{attr}: no examples, prior leaf"])
        trees[attr] = t
        report.extend(t.report)
        clauses.extend(dlt_to_clauses(t))
    rank_decl = Clause(struct("rank", tuple(bias.rank)))
    background = tuple(c for c in bias.background.items if type(c) is Clause and not c.is_fact)
    background += tuple(
        c for c in bias.background.items if type(c) is DistClause and c.attribute not in bias.rank
    )
    program = Program((rank_decl,) + background + tuple(clauses) + tuple(data.r_db), "<learned>")
    errors = [d for d in validate_program(program) if d.severity == "error"]
    if errors:
        raise errors[0].error_class(str(errors[0]))
    return LearnedJMP(program, trees, report)


def format_report(jmp: LearnedJMP) -> str:
    lines = list(jmp.report)
    lines.append("")
    for attr, t in jmp.trees.items():
        lines.append(f"% {attr}")
        lines.extend(format_clause(c) for c in dlt_to_clauses(t))
    return "\n".join(lines) + "\n"
