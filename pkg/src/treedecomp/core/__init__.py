"""
treedecomp - Core Module

This module contains the decomposition machinery: data models, correlation
ingestion, trees, quartet errors, the greedy Stage 1 search, Stage 2
parameter estimation, synthetic models and evaluation.
"""

from .models import CandidateKind, CorrelationMatrix, ErrorMode, SampleTable, SimplificationPolicy, Stage1Trace, TiePolicy
from .exceptions import InputError, NumericError, TreeDecompError, TreeError
from .correlation import compute_correlations, load_matrix, load_samples
from .tree import DecompTree, ForestState, simplify
from .stage1 import TreeDecomposer, decompose
from .stage2 import Stage2Result, estimate_parameters
from .synth import GeneratorModel, exact_matrix, generate_model, sample_data
from .evaluation import compare_models

__all__ = [
    "CandidateKind",
    "CorrelationMatrix",
    "ErrorMode",
    "SampleTable",
    "SimplificationPolicy",
    "Stage1Trace",
    "TiePolicy",
    "TreeDecompError",
    "InputError",
    "TreeError",
    "NumericError",
    "compute_correlations",
    "load_matrix",
    "load_samples",
    "DecompTree",
    "ForestState",
    "simplify",
    "TreeDecomposer",
    "decompose",
    "Stage2Result",
    "estimate_parameters",
    "GeneratorModel",
    "generate_model",
    "exact_matrix",
    "sample_data",
    "compare_models",
]
