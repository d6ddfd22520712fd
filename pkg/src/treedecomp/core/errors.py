"""
treedecomp - Decomposition Errors

Quartet-based error metrics that Stage 1 minimizes. The quad error of the
pairing (i, j) | (k, l) is |rho_ik rho_jl - rho_il rho_jk|; it vanishes when
the pairing matches the tree that generated the correlations. Pair, tree
and node errors aggregate quad errors over the leaves of a tree.
"""

import logging
import threading
from itertools import combinations
from typing import TYPE_CHECKING, Dict, FrozenSet, Iterable, Optional, Union

import numpy as np

from ..utils.cache import DEFAULT_MAX_N, QuadErrorCache
from .exceptions import OverlappingTrees, QuartetIndexError, TreeTooSmall
from .models import CorrelationMatrix, ErrorMode, ErrorReport, parse_enum

if TYPE_CHECKING:
    from .tree import DecompTree

logger = logging.getLogger(__name__)


def quad_error(matrix: CorrelationMatrix, i: int, j: int, k: int, l: int) -> float:
    """
    Quad error of the pairing (i, j) | (k, l)

    Raises:
        QuartetIndexError: repeated or out-of-range indices
    """
    _check_quartet(matrix.n, (i, j, k, l))
    rho = matrix.rho
    return float(abs(rho[i, k] * rho[j, l] - rho[i, l] * rho[j, k]))


def quartet_errors(rho: np.ndarray, quartets: np.ndarray) -> np.ndarray:
    """
    Quad errors of the three pairings of every quartet

    Args:
        rho: correlation matrix
        quartets: (Q, 4) array of leaves (a, b, c, d)

    Returns:
        (Q, 3) array for the pairings ab|cd, ac|bd and ad|bc
    """
    a, b, c, d = (quartets[:, column] for column in range(4))
    return np.stack([
        np.abs(rho[a, c] * rho[b, d] - rho[a, d] * rho[b, c]),
        np.abs(rho[a, b] * rho[c, d] - rho[a, d] * rho[c, b]),
        np.abs(rho[a, b] * rho[d, c] - rho[a, c] * rho[d, b]),
    ], axis=1)


def _check_quartet(n: int, indices):
    if len(set(indices)) != len(indices):
        raise QuartetIndexError(f"quartet indices must be distinct, got {indices}")
    for index in indices:
        if not 0 <= index < n:
            raise QuartetIndexError(f"index {index} outside 0..{n - 1}")


class QuartetScorer:
    """
    Evaluates decomposition errors against one correlation matrix

    Every evaluated quad term is counted, so a search can report how much
    work it did. Join errors are memoized per pair of leaf sets for the
    scorer's lifetime, and their terms count towards evaluations as well
    as towards the split_evaluations breakdown.

    Attributes:
        matrix: the correlations being scored
        cache: precomputed quad table, or None to compute terms directly
        evaluations: every quad term inspected
        split_evaluations: the part of evaluations spent on join and split errors
    """

    def __init__(
        self,
        matrix: CorrelationMatrix,
        use_cache: bool = True,
        max_n: int = DEFAULT_MAX_N,
    ):
        self.matrix = matrix
        self.rho = matrix.rho
        self.cache: Optional[QuadErrorCache] = None
        if use_cache and matrix.n <= max_n:
            self.cache = QuadErrorCache(matrix.rho, max_n=max_n)
        self.evaluations = 0
        self.split_evaluations = 0
        self._joins: Dict[FrozenSet[FrozenSet[int]], float] = {}
        self._lock = threading.Lock()

    def count_terms(self, terms: int, split: bool = False):
        with self._lock:
            self.evaluations += terms
            if split:
                self.split_evaluations += terms

    def _terms(self, i, j, k, l) -> np.ndarray:
        """Elementwise quad errors over broadcast index arrays"""
        if self.cache is not None:
            return self.cache.lookup(i, j, k, l)
        rho = self.rho
        return np.abs(rho[i, k] * rho[j, l] - rho[i, l] * rho[j, k])

    def quad(self, i: int, j: int, k: int, l: int) -> float:
        _check_quartet(self.matrix.n, (i, j, k, l))
        self.count_terms(1)
        return float(self._terms(i, j, k, l))

    def pair_pair(self, i: int, j: int, k: int, l: int) -> ErrorReport:
        """Error of joining pairs (i, j) and (k, l): a single quad term"""
        value = self.quad(i, j, k, l)
        return ErrorReport(value=value, witness=(i, j, k, l), floor=value, terms=1)

    def pair_tree(
        self,
        i: int,
        j: int,
        tree: "DecompTree",
        mode: Union[ErrorMode, str] = ErrorMode.MAX,
    ) -> ErrorReport:
        """Max (or mean) quad error of (i, j) against every leaf pair of the tree"""
        mode = parse_enum(ErrorMode, mode)
        leaves = np.array(sorted(tree.leaf_set), dtype=int)
        if leaves.size < 2:
            raise TreeTooSmall(leaves.size, 2)
        if i == j or i in tree.leaf_set or j in tree.leaf_set:
            raise QuartetIndexError(f"pair ({i}, {j}) must be distinct and outside tree {tree.tree_id}")

        first, second = np.triu_indices(leaves.size, k=1)
        k, l = leaves[first], leaves[second]
        terms = self._terms(i, j, k, l)
        self.count_terms(terms.size)

        best = int(np.argmax(terms))
        return _report(terms, mode, (i, j, int(k[best]), int(l[best])))

    def tree_tree(
        self,
        first_tree: "DecompTree",
        second_tree: "DecompTree",
        mode: Union[ErrorMode, str] = ErrorMode.MAX,
    ) -> ErrorReport:
        """Max (or mean) quad error over leaf pairs drawn one from each tree"""
        mode = parse_enum(ErrorMode, mode)
        for tree in (first_tree, second_tree):
            if tree.size < 2:
                raise TreeTooSmall(tree.size, 2)
        shared = first_tree.leaf_set & second_tree.leaf_set
        if shared:
            raise OverlappingTrees(f"trees {first_tree.tree_id} and {second_tree.tree_id} share {sorted(shared)}")

        i, j = _leaf_pairs(first_tree.leaf_set)
        k, l = _leaf_pairs(second_tree.leaf_set)
        if self.cache is not None:
            terms = self.cache.block(self.cache.pair_ids(i, j), self.cache.pair_ids(k, l))
        else:
            terms = self._terms(i[:, None], j[:, None], k[None, :], l[None, :])
        self.count_terms(terms.size)

        row, column = np.unravel_index(int(np.argmax(terms)), terms.shape)
        witness = (int(i[row]), int(j[row]), int(k[column]), int(l[column]))
        return _report(terms.ravel(), mode, witness)

    def node_tree(self, i: int, tree: "DecompTree") -> ErrorReport:
        """
        Max quad error of attaching variable i at the tree's root

        For every leaf triple the rooted structure of the tree names the
        cherry (the pair with the deeper common ancestor); i is paired with
        the remaining leaf. Triples under a multifurcation have no cherry
        and are scored under all three pairings.
        """
        leaves, depths = tree.leaf_lca_depth
        if leaves.size < 3:
            raise TreeTooSmall(leaves.size, 3)
        if i in tree.leaf_set:
            raise QuartetIndexError(f"variable {i} already belongs to tree {tree.tree_id}")

        triples = np.array(list(combinations(range(leaves.size), 3)), dtype=int)
        p, q, r = triples[:, 0], triples[:, 1], triples[:, 2]
        d_pq, d_pr, d_qr = depths[p, q], depths[p, r], depths[q, r]

        # (outlier, cherry) position arrays for resolved triples
        outlier = np.where(d_qr > np.maximum(d_pq, d_pr), p, np.where(d_pr > np.maximum(d_pq, d_qr), q, r))
        cherry_a = np.where(outlier == p, q, p)
        cherry_b = np.where(outlier == r, q, r)
        resolved = (d_qr > np.maximum(d_pq, d_pr)) | (d_pr > np.maximum(d_pq, d_qr)) | (d_pq > np.maximum(d_pr, d_qr))

        roles = [(outlier[resolved], cherry_a[resolved], cherry_b[resolved])]
        if not resolved.all():
            up, uq, ur = p[~resolved], q[~resolved], r[~resolved]
            roles.extend([(up, uq, ur), (uq, up, ur), (ur, up, uq)])

        outliers = np.concatenate([leaves[o] for o, _, _ in roles])
        first = np.concatenate([leaves[a] for _, a, _ in roles])
        second = np.concatenate([leaves[b] for _, _, b in roles])
        terms = self._terms(i, outliers, first, second)
        self.count_terms(terms.size)

        best = int(np.argmax(terms))
        witness = (i, int(outliers[best]), int(first[best]), int(second[best]))
        return _report(terms, ErrorMode.MAX, witness)

    def split(self, clade: Iterable[int], universe: Optional[Iterable[int]] = None) -> float:
        """
        How far a leaf set is from being a split of the whole variable set

        Max quad error of (a, b) | (c, d) with a, b inside the clade and c, d
        outside; 0.0 when either side has fewer than two leaves.
        """
        inside = frozenset(clade)
        everything = frozenset(range(self.matrix.n)) if universe is None else frozenset(universe)
        outside = everything - inside
        if len(inside) < 2 or len(outside) < 2:
            return 0.0

        a, b = _leaf_pairs(inside)
        c, d = _leaf_pairs(outside)
        if self.cache is not None:
            terms = self.cache.block(self.cache.pair_ids(a, b), self.cache.pair_ids(c, d))
        else:
            terms = self._terms(a[:, None], b[:, None], c[None, :], d[None, :])
        self.count_terms(terms.size, split=True)
        return float(terms.max())

    def join(self, first: Iterable[int], second: Iterable[int]) -> float:
        """
        How far the union of two clades is from being a clade itself

        Max quad error of (a, b) | (x, y) with a in the first set, b in the
        second and x, y outside both. On a tree-generated matrix, two
        disjoint clades give 0 exactly when they are siblings. Results are
        memoized, so each pair of leaf sets is scored once per scorer.
        """
        left, right = frozenset(first), frozenset(second)
        key = frozenset((left, right))
        with self._lock:
            known = self._joins.get(key)
        if known is not None:
            return known

        if left & right:
            raise OverlappingTrees(f"clades {sorted(left)} and {sorted(right)} overlap")
        outside = sorted(frozenset(range(self.matrix.n)) - left - right)
        if not left or not right or len(outside) < 2:
            value = 0.0
        else:
            a, b = np.meshgrid(sorted(left), sorted(right), indexing="ij")
            a, b = a.ravel(), b.ravel()
            x, y = _leaf_pairs(frozenset(outside))
            if self.cache is not None:
                terms = self.cache.block(self.cache.pair_ids(a, b), self.cache.pair_ids(x, y))
            else:
                terms = self._terms(a[:, None], b[:, None], x[None, :], y[None, :])
            self.count_terms(terms.size, split=True)
            value = float(terms.max())

        with self._lock:
            self._joins[key] = value
        return value


def _leaf_pairs(leaves: FrozenSet[int]):
    ordered = np.array(sorted(leaves), dtype=int)
    first, second = np.triu_indices(ordered.size, k=1)
    return ordered[first], ordered[second]


def _report(terms: np.ndarray, mode: ErrorMode, witness) -> ErrorReport:
    value = float(terms.max()) if mode is ErrorMode.MAX else float(terms.mean())
    return ErrorReport(value=value, witness=tuple(int(x) for x in witness), floor=float(terms.min()), terms=int(terms.size))


def pair_tree_error(
    matrix: CorrelationMatrix,
    i: int,
    j: int,
    tree: "DecompTree",
    mode: Union[ErrorMode, str] = ErrorMode.MAX,
) -> ErrorReport:
    return QuartetScorer(matrix, use_cache=False).pair_tree(i, j, tree, mode)


def tree_tree_error(
    matrix: CorrelationMatrix,
    first_tree: "DecompTree",
    second_tree: "DecompTree",
    mode: Union[ErrorMode, str] = ErrorMode.MAX,
) -> ErrorReport:
    return QuartetScorer(matrix, use_cache=False).tree_tree(first_tree, second_tree, mode)


def node_tree_error(matrix: CorrelationMatrix, i: int, tree: "DecompTree") -> ErrorReport:
    return QuartetScorer(matrix, use_cache=False).node_tree(i, tree)


def split_error(matrix: CorrelationMatrix, clade: Iterable[int], universe: Optional[Iterable[int]] = None) -> float:
    return QuartetScorer(matrix, use_cache=False).split(clade, universe)
