"""Sampling inference for distributional programs."""

from .core import UNDEFINED, Engine, World, aggregate, to_distribution
from .relevance import DependencyGraph, bayes_ball, dependency_graph, relevant_evidence, requisite_evidence
from .estimate import (
    Predictive,
    ProofRecord,
    Query,
    estimate_conditional,
    forward_sample_world,
    log_conditional_density,
    predictive,
    sample_weighted_proofs,
    weighted_estimate,
)

__all__ = [
    "UNDEFINED",
    "DependencyGraph",
    "Engine",
    "Predictive",
    "ProofRecord",
    "Query",
    "World",
    "aggregate",
    "bayes_ball",
    "dependency_graph",
    "estimate_conditional",
    "forward_sample_world",
    "log_conditional_density",
    "predictive",
    "relevant_evidence",
    "requisite_evidence",
    "sample_weighted_proofs",
    "to_distribution",
    "weighted_estimate",
]
