"""Exception hierarchy shared by all subsystems.

Every error carries an ``exit_code`` so the command line can map failures
onto its documented codes (2 = data/validation, 3 = numerical failure).
"""

from __future__ import annotations


class RelCompleteError(Exception):
    exit_code = 2


# --- syntax -----------------------------------------------------------------


class DCSyntaxError(RelCompleteError):
    """Malformed source text. ``line``/``col`` are 1-based."""

    def __init__(self, message: str, line: int = 0, col: int = 0, source: str = "<string>"):
        self.message = message
        self.line = line
        self.col = col
        self.source = source
        super().__init__(f"{source}:{line}:{col}: error: {message}")


class ArityError(DCSyntaxError):
    pass


class ValidityError(RelCompleteError):
    """Base for static program validity violations."""


class StratificationError(ValidityError):
    pass


class MissingRankError(ValidityError):
    pass


class DuplicateDefinitionError(ValidityError):
    pass


# --- distributions ----------------------------------------------------------


class DistributionError(RelCompleteError):
    exit_code = 3


class ArityMismatch(DistributionError):
    pass


class TypeMismatch(RelCompleteError):
    pass


class DegenerateData(DistributionError):
    pass


# --- inference --------------------------------------------------------------


class InferenceError(RelCompleteError):
    pass


class ConflictingDefinition(InferenceError):
    """Two different distributions were derived for one ground random variable."""


class NonTermination(InferenceError):
    exit_code = 3


class InstantiationError(InferenceError):
    pass


class ZeroEvidenceWeight(InferenceError):
    exit_code = 3


# --- relational data --------------------------------------------------------


class DataError(RelCompleteError):
    pass


class DanglingForeignKey(DataError):
    pass


class DuplicateKey(DataError):
    pass


class CellAlreadyObserved(DataError):
    pass


class OutOfDomain(DataError):
    pass


class NonCanonicalTable(DataError):
    pass


class BiasError(DataError):
    pass


class UnknownAttribute(BiasError):
    pass


class ModeTypeError(BiasError):
    pass


# --- learning / evaluation --------------------------------------------------


class NoExamples(RelCompleteError):
    pass


class EmptyInput(RelCompleteError):
    pass


class ZeroRange(RelCompleteError):
    pass


class SingleClass(RelCompleteError):
    pass
