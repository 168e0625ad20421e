"""Hypothesis-based inference in conditional linear Gaussian networks.

The discrete part of a query is handled by a clique tree (exact marginals,
sampling and K-best enumeration); each discrete hypothesis then fixes one
joint Gaussian over the continuous nodes. Exact answers sum over every
hypothesis; the approximate ones (prior-order enumeration, likelihood
weighting, Gibbs) sum over a generated subset.
"""

from .errors import (CapExceededError, ClgError, DegenerateResultError, GibbsInitError, ImpossibleEvidenceError,
                     InferenceError, InputError, NetworkParseError, NumericalError, StructureError,
                     TrackingLostError, UnsupportedStructureError)
from .gaussian import (GaussianDist, GaussianMixture, WeightedGaussian, collapse, condition,
                       joint_for_hypothesis, log_normalize, marginalize)
from .inference import (Hypothesis, HypothesisSpace, Query, QueryResult, answer_enum, answer_exact, answer_gibbs,
                        answer_lw, evaluate_hypothesis, residual_mass_bound, reweigh)
from .model import (ContinuousNode, DiscreteNode, Evidence, Network, continuous_node, direct_discrete_parents,
                    discrete_node, parse_evidence, parse_network, serialize_network, topological_order, validate)

__version__ = "0.1.0"

__all__ = [
    "CapExceededError", "ClgError", "DegenerateResultError", "GibbsInitError", "ImpossibleEvidenceError",
    "InferenceError", "InputError", "NetworkParseError", "NumericalError", "StructureError", "TrackingLostError",
    "UnsupportedStructureError",
    "GaussianDist", "GaussianMixture", "WeightedGaussian", "collapse", "condition", "joint_for_hypothesis",
    "log_normalize", "marginalize",
    "Hypothesis", "HypothesisSpace", "Query", "QueryResult", "answer_enum", "answer_exact", "answer_gibbs",
    "answer_lw", "evaluate_hypothesis", "residual_mass_bound", "reweigh",
    "ContinuousNode", "DiscreteNode", "Evidence", "Network", "continuous_node", "direct_discrete_parents",
    "discrete_node", "parse_evidence", "parse_network", "serialize_network", "topological_order", "validate",
]
