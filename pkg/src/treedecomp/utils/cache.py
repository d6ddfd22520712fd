"""
treedecomp - Quad Error Cache

Precomputed table of |rho_ik rho_jl - rho_il rho_jk| for every pair of
variable pairs, computed once per correlation matrix.
"""

import logging

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_MAX_N = 48


class QuadErrorCache:
    """
    Pair-indexed quad error table

    Entry [p, q] holds the quad error of pairing p = (i, j) against
    q = (k, l). Rows or columns whose pairs overlap are filled but never
    meaningful.

    Attributes:
        n: number of variables
        index: n x n matrix mapping an unordered pair to its table index
        table: C(n, 2) x C(n, 2) quad errors
    """

    def __init__(self, rho: np.ndarray, max_n: int = DEFAULT_MAX_N):
        n = rho.shape[0]
        if n > max_n:
            raise ValueError(f"quad table limited to {max_n} variables, got {n}")
        self.n = n

        first, second = np.triu_indices(n, k=1)
        self.index = np.full((n, n), -1, dtype=np.intp)
        self.index[first, second] = np.arange(first.size)
        self.index[second, first] = np.arange(first.size)

        self.table = np.abs(
            rho[np.ix_(first, first)] * rho[np.ix_(second, second)]
            - rho[np.ix_(first, second)] * rho[np.ix_(second, first)]
        )
        logger.debug(f"Quad table built: {first.size} pairs, {self.table.nbytes / 1e6:.1f} MB")

    def lookup(self, i, j, k, l) -> np.ndarray:
        """Elementwise quad errors for index arrays (broadcast together)"""
        return self.table[self.index[i, j], self.index[k, l]]

    def block(self, left_pairs: np.ndarray, right_pairs: np.ndarray) -> np.ndarray:
        """Quad errors for every (left pair, right pair) combination"""
        return self.table[np.ix_(left_pairs, right_pairs)]

    def pair_ids(self, first: np.ndarray, second: np.ndarray) -> np.ndarray:
        return self.index[first, second]

    @property
    def size(self) -> int:
        return int(self.table.shape[0])
