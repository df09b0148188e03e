"""Genetic hyperparameter optimisation with hierarchical evaluation and
tree-structured mutation."""

from .evaluation import Evaluator, ExternalEvaluator, SyntheticObjective, make_benchmark_objective
from .evolve import EliteArchive, GaConfig, Individual, RunRecord, run_hesga
from .space import Genotype, HyperparameterDef, SearchSpace, reference_space
from .stats import RunSample, t_test
from .tree import PathKey, SpaceTree

__all__ = [
    "EliteArchive",
    "Evaluator",
    "ExternalEvaluator",
    "GaConfig",
    "Genotype",
    "HyperparameterDef",
    "Individual",
    "PathKey",
    "RunRecord",
    "RunSample",
    "SearchSpace",
    "SpaceTree",
    "SyntheticObjective",
    "make_benchmark_objective",
    "reference_space",
    "run_hesga",
    "t_test",
]

__version__ = "0.1.0"
