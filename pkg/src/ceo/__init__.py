"""Causal entropy optimization.

Jointly learns a causal graph from an enumerated hypothesis space and searches
for the intervention minimizing (or maximizing) a target's causal effect.
"""

from .benchmarks import Benchmark, OptimumRecord, make_benchmark
from .engine import GapResult, RunConfig, RunTrace, gap_metric, intervention_cost, run_cbo, run_cd_cbo, run_ceo, true_optimum_oracle
from .errors import CeoError
from .graphs import Dag, HypothesisSpace, InterventionSet
from .posterior import GraphPosterior

__version__ = "0.1.0"

__all__ = [
    "Benchmark",
    "CeoError",
    "Dag",
    "GapResult",
    "GraphPosterior",
    "HypothesisSpace",
    "InterventionSet",
    "OptimumRecord",
    "RunConfig",
    "RunTrace",
    "gap_metric",
    "intervention_cost",
    "make_benchmark",
    "run_cbo",
    "run_cd_cbo",
    "run_ceo",
    "true_optimum_oracle",
]
