"""
treedecomp - Latent Tree Decomposition

Reconstructs a tree of hidden binary variables from the pairwise
correlations of observed binary variables: a greedy quartet-error search
builds the topology, then least squares and constrained fits recover edge
correlations and hidden-node parameters.
"""

__version__ = "1.0.0"
__license__ = "MIT"

from .core import CorrelationMatrix, DecompTree, compute_correlations, decompose, estimate_parameters
from .utils.config import Config

__all__ = [
    "CorrelationMatrix",
    "DecompTree",
    "compute_correlations",
    "decompose",
    "estimate_parameters",
    "Config",
]
