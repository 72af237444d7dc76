"""Structure and parameter learning of joint model programs."""

from .dlt import (
    DLT,
    FAIL,
    SUCCESS,
    LearnParams,
    Leaf,
    Node,
    Records,
    TrainingSet,
    dlt_to_clauses,
    fit_leaf,
    induce_dlt,
    partition,
    score_clause,
    score_refinement,
    tree_shape,
)
from .jmp import LearnedJMP, format_report, learn_jmp, model_clauses, training_program, with_database
from .refine import Refinement, rank_allows, refinements

__all__ = [
    "DLT",
    "FAIL",
    "SUCCESS",
    "LearnParams",
    "LearnedJMP",
    "Leaf",
    "Node",
    "Records",
    "Refinement",
    "TrainingSet",
    "dlt_to_clauses",
    "fit_leaf",
    "format_report",
    "induce_dlt",
    "learn_jmp",
    "model_clauses",
    "partition",
    "rank_allows",
    "refinements",
    "score_clause",
    "score_refinement",
    "training_program",
    "tree_shape",
    "with_database",
]
