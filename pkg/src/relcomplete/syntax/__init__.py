"""Term language, parser, printer, unification and static validity checks."""

from .parser import parse_goal, parse_program, parse_term
from .printer import format_clause, format_program, format_term
from .program import Clause, DistClause, Program, conj_to_list, list_to_conj
from .validate import Diagnostic, validate_program
from .terms import (
    Renamer,
    Struct,
    Var,
    apply_substitution,
    is_ground,
    resolve,
    struct,
    unify,
    unify_terms,
    walk,
)

__all__ = [
    "Clause",
    "Diagnostic",
    "DistClause",
    "Program",
    "Renamer",
    "Struct",
    "Var",
    "apply_substitution",
    "conj_to_list",
    "format_clause",
    "format_program",
    "format_term",
    "is_ground",
    "list_to_conj",
    "parse_goal",
    "parse_program",
    "parse_term",
    "resolve",
    "struct",
    "unify",
    "unify_terms",
    "validate_program",
    "walk",
]
