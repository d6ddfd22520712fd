"""
treedecomp - Stage 2 Parameter Estimation

Recovers edge correlations of a fixed topology and fits the hidden-node
probabilities.

Magnitudes: every leaf-pair correlation is the product of the edge
correlations on its path, so log|rho_ij| is a sum of per-edge unknowns and
the edge magnitudes follow from a linear least-squares solve. Signs are
recovered separately by a parity solver. Each hidden node then gets a prior
and per-leaf conditionals matching its leaf correlations.
"""

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import lstsq
from scipy.optimize import minimize

from ..utils.config import Stage2Config, worker_cap
from .exceptions import (
    CorrelationTooSmall,
    FitNotConverged,
    InconsistentSigns,
    SchemaError,
    SingularSystem,
    TreeNotSimplified,
)
from .models import CorrelationMatrix
from .tree import DecompTree, Edge, node_products, path_products, simplify

logger = logging.getLogger(__name__)

PRIOR_BOUNDS = (1e-9, 1.0 - 1e-9)
EXHAUSTIVE_SIGN_LIMIT = 16


@dataclass(frozen=True, eq=False)
class PathSystem:
    """
    Path incidence system of a simplified tree

    Attributes:
        tree: the simplified tree the system was built from
        edges: the unknowns, as (parent, child) pairs
        rows: leaf pairs (i, j) kept in the system
        A: rows x edges 0/1 incidence matrix
        b: log|rho_ij| per row
        sign_b: sign of rho_ij per row (+1 or -1)
        excluded: leaf pairs dropped because |rho_ij| < rho_min
    """
    tree: DecompTree
    edges: Tuple[Edge, ...]
    rows: Tuple[Tuple[int, int], ...]
    A: np.ndarray
    b: np.ndarray
    sign_b: np.ndarray
    excluded: Tuple[Tuple[int, int], ...] = ()


@dataclass(frozen=True)
class SignSolution:
    """
    Edge signs and how well they explain the observed signs

    Attributes:
        signs: per-edge sign in system edge order
        leaf_signs: leaf -> sign before gauge fixing
        violations: rows whose sign the assignment contradicts
    """
    signs: np.ndarray
    leaf_signs: Dict[int, int]
    violations: Tuple[Tuple[int, int], ...] = ()

    @property
    def consistent(self) -> bool:
        return not self.violations


@dataclass(frozen=True, eq=False)
class EdgeSolution:
    """
    Recovered edge correlations

    Attributes:
        edges: (parent, child) pairs
        log_abs: least-squares log magnitudes
        sign: per-edge sign
        rho_edge: sign * exp(log_abs), clamped to [-1, 1] only when requested
        residual_norm: ||A x - b|| at the solution
        sign_violations: rows whose observed sign is not reproduced
        over_unit: edges whose magnitude exceeded 1 + edge_tolerance
        clamped: whether over_unit edges were clipped
    """
    edges: Tuple[Edge, ...]
    log_abs: np.ndarray
    sign: np.ndarray
    rho_edge: np.ndarray
    residual_norm: float
    sign_violations: int = 0
    over_unit: Tuple[Edge, ...] = ()
    clamped: bool = False

    def as_mapping(self) -> Dict[Edge, float]:
        return {edge: float(value) for edge, value in zip(self.edges, self.rho_edge)}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "edges": [
                {"parent": p, "child": c, "rho": float(r), "log_abs": float(x), "sign": int(s)}
                for (p, c), r, x, s in zip(self.edges, self.rho_edge, self.log_abs, self.sign)
            ],
            "residual_norm": self.residual_norm,
            "sign_violations": self.sign_violations,
            "over_unit": [list(edge) for edge in self.over_unit],
            "clamped": self.clamped,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EdgeSolution":
        try:
            records = data["edges"]
            return cls(
                edges=tuple((int(r["parent"]), int(r["child"])) for r in records),
                log_abs=np.array([float(r["log_abs"]) for r in records]),
                sign=np.array([int(r["sign"]) for r in records]),
                rho_edge=np.array([float(r["rho"]) for r in records]),
                residual_norm=float(data["residual_norm"]),
                sign_violations=int(data.get("sign_violations", 0)),
                over_unit=tuple(tuple(int(x) for x in edge) for edge in data.get("over_unit", [])),
                clamped=bool(data.get("clamped", False)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed edge solution: {e}") from None


@dataclass(frozen=True, eq=False)
class LeafHiddenTable:
    """
    Correlations between every leaf and every hidden node

    Attributes:
        leaves: leaf ids, row order
        hidden: hidden node ids, column order
        values: len(leaves) x len(hidden) correlations
    """
    leaves: Tuple[int, ...]
    hidden: Tuple[int, ...]
    values: np.ndarray

    def column(self, node: int) -> np.ndarray:
        return self.values[:, self.hidden.index(node)]

    def value(self, leaf: int, node: int) -> float:
        return float(self.values[self.leaves.index(leaf), self.hidden.index(node)])


@dataclass
class NodeFit:
    """
    Fitted parameters of one hidden node

    Attributes:
        node: hidden node id
        prior: p(w = 1)
        conditional: leaf -> p(leaf = 1 | w = 1)
        residual: sum of squared correlation residuals
        converged: residual within the configured tolerance
        non_unique: other priors reach the same residual
        prior_interval: range of priors with a zero-residual solution
        histories: objective values per iteration, one list per start
    """
    node: int
    prior: float
    conditional: Dict[int, float]
    residual: float
    converged: bool = True
    non_unique: bool = False
    prior_interval: Optional[Tuple[float, float]] = None
    histories: List[List[float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "node": self.node,
            "prior": self.prior,
            "conditional": {str(leaf): value for leaf, value in sorted(self.conditional.items())},
            "residual": self.residual,
            "converged": self.converged,
            "non_unique": self.non_unique,
            "prior_interval": list(self.prior_interval) if self.prior_interval else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NodeFit":
        interval = data.get("prior_interval")
        return cls(
            node=int(data["node"]),
            prior=float(data["prior"]),
            conditional={int(leaf): float(value) for leaf, value in data["conditional"].items()},
            residual=float(data["residual"]),
            converged=bool(data.get("converged", True)),
            non_unique=bool(data.get("non_unique", False)),
            prior_interval=tuple(float(x) for x in interval) if interval else None,
        )


@dataclass
class NodeParameters:
    """Fitted priors and conditionals for every hidden node"""
    fits: Dict[int, NodeFit] = field(default_factory=dict)

    @property
    def prior(self) -> Dict[int, float]:
        return {node: fit.prior for node, fit in self.fits.items()}

    @property
    def conditional(self) -> Dict[Tuple[int, int], float]:
        """(leaf, hidden node) -> p(leaf = 1 | node = 1)"""
        return {(leaf, node): value for node, fit in self.fits.items() for leaf, value in fit.conditional.items()}

    @property
    def fit_residual(self) -> float:
        return float(sum(fit.residual for fit in self.fits.values()))

    def to_dict(self) -> Dict[str, Any]:
        return {"nodes": [self.fits[node].to_dict() for node in sorted(self.fits)], "fit_residual": self.fit_residual}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NodeParameters":
        try:
            fits = [NodeFit.from_dict(record) for record in data["nodes"]]
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed node parameters: {e}") from None
        return cls(fits={fit.node: fit for fit in fits})


# ---------------------------------------------------------------------------
# Path system and magnitudes
# ---------------------------------------------------------------------------

def build_path_system(
    tree: DecompTree,
    matrix: CorrelationMatrix,
    rho_min: float = 1e-6,
    exclude_small: bool = False,
) -> PathSystem:
    """
    Build the log-domain path incidence system

    Args:
        tree: topology with every internal node of degree >= 3
        matrix: observed correlations
        rho_min: smallest admissible |rho_ij|
        exclude_small: drop rows below rho_min instead of raising, as long
            as at least as many rows as edges remain

    Raises:
        TreeNotSimplified: an internal node has degree below 3
        CorrelationTooSmall: a row is below rho_min and cannot be dropped
    """
    for node, kids in tree.children.items():
        degree = len(kids) + (0 if node == tree.root else 1)
        if degree < 3:
            raise TreeNotSimplified(node)

    edges = tree.edges
    column = {edge: k for k, edge in enumerate(edges)}
    rows, excluded, values = [], [], []
    for i, j in combinations(sorted(tree.leaf_set), 2):
        value = float(matrix.rho[i, j])
        if abs(value) < rho_min:
            if not exclude_small:
                raise CorrelationTooSmall(i, j, value)
            excluded.append((i, j))
            continue
        rows.append((i, j))
        values.append(value)

    if excluded:
        if len(rows) < len(edges):
            i, j = excluded[0]
            raise CorrelationTooSmall(i, j, float(matrix.rho[i, j]))
        logger.warning(f"Excluded {len(excluded)} leaf pairs with |rho| < {rho_min}: {excluded[:5]}")

    A = np.zeros((len(rows), len(edges)))
    for r, (i, j) in enumerate(rows):
        for edge in tree.path_edges(i, j):
            A[r, column[edge]] = 1.0

    values = np.array(values, dtype=float)
    return PathSystem(
        tree=tree,
        edges=edges,
        rows=tuple(rows),
        A=A,
        b=np.log(np.abs(values)) if values.size else np.zeros(0),
        sign_b=np.where(values < 0, -1, 1),
        excluded=tuple(excluded),
    )


def solve_edge_magnitudes(system: PathSystem, cond_max: float = 1e12) -> Tuple[np.ndarray, float]:
    """
    Least-squares log magnitudes of the edge correlations

    Returns:
        (log_abs per edge, residual norm)

    Raises:
        SingularSystem: rank deficient or condition number above cond_max
    """
    A, b = system.A, system.b
    edge_count = A.shape[1]
    if A.shape[0] < edge_count or np.linalg.matrix_rank(A) < edge_count:
        raise SingularSystem(f"incidence matrix of shape {A.shape} is rank deficient")
    condition = float(np.linalg.cond(A))
    if not np.isfinite(condition) or condition > cond_max:
        raise SingularSystem(f"incidence matrix condition number {condition:.3g} exceeds {cond_max:.3g}", condition)

    solution, _, _, _ = lstsq(A, b)
    residual = float(np.linalg.norm(A @ solution - b))
    logger.debug(f"Least squares: {A.shape[0]} rows, {edge_count} edges, cond {condition:.3g}, residual {residual:.3g}")
    return solution, residual


# ---------------------------------------------------------------------------
# Signs
# ---------------------------------------------------------------------------

def solve_edge_signs(system: PathSystem) -> SignSolution:
    """
    Edge signs reproducing the observed correlation signs

    The observed signs are consistent exactly when leaf signs s exist with
    sign(rho_ij) = s_i s_j. Leaf signs are found by propagation, falling
    back to exhaustive search (up to 16 leaves) or greedy flips when no
    assignment fits every row. Pendant edges carry the leaf sign, internal
    edges start positive, and the gauge is fixed by flipping hidden nodes
    so that the fewest edges are negative.

    Emits an InconsistentSigns warning when some row cannot be matched.
    """
    leaves = sorted(system.tree.leaf_set)
    rows = system.rows
    observed = {row: int(sign) for row, sign in zip(rows, system.sign_b)}

    leaf_signs = _propagate_signs(leaves, observed)
    violations = _violated(leaf_signs, observed)
    if violations:
        leaf_signs = _search_signs(leaves, observed, leaf_signs)
        violations = _violated(leaf_signs, observed)
        message = f"{len(violations)} of {len(rows)} correlation signs cannot be reproduced by any tree signing"
        logger.warning(message)
        warnings.warn(InconsistentSigns(message), stacklevel=2)

    signs = _fix_gauge(system.tree, leaf_signs)
    return SignSolution(
        signs=np.array([signs[edge] for edge in system.edges], dtype=int),
        leaf_signs=leaf_signs,
        violations=tuple(violations),
    )


def _propagate_signs(leaves: List[int], observed: Dict[Tuple[int, int], int]) -> Dict[int, int]:
    neighbors: Dict[int, List[Tuple[int, int]]] = {leaf: [] for leaf in leaves}
    for (i, j), sign in observed.items():
        neighbors[i].append((j, sign))
        neighbors[j].append((i, sign))

    signs: Dict[int, int] = {}
    for start in leaves:
        if start in signs:
            continue
        signs[start] = 1
        stack = [start]
        while stack:
            node = stack.pop()
            for other, sign in sorted(neighbors[node]):
                if other not in signs:
                    signs[other] = signs[node] * sign
                    stack.append(other)
    return signs


def _violated(signs: Dict[int, int], observed: Dict[Tuple[int, int], int]) -> List[Tuple[int, int]]:
    return [(i, j) for (i, j), sign in observed.items() if signs[i] * signs[j] != sign]


def _search_signs(leaves: List[int], observed: Dict[Tuple[int, int], int], start: Dict[int, int]) -> Dict[int, int]:
    position = {leaf: k for k, leaf in enumerate(leaves)}
    first = np.array([position[i] for i, _ in observed])
    second = np.array([position[j] for _, j in observed])
    target = np.array(list(observed.values()))

    if len(leaves) <= EXHAUSTIVE_SIGN_LIMIT:
        codes = np.arange(2 ** (len(leaves) - 1))
        bits = (codes[:, None] >> np.arange(len(leaves) - 1)) & 1
        patterns = np.hstack([np.ones((codes.size, 1), dtype=int), 1 - 2 * bits])
        misses = (patterns[:, first] * patterns[:, second] != target).sum(axis=1)
        best = patterns[int(np.argmin(misses))]
        return {leaf: int(best[position[leaf]]) for leaf in leaves}

    current = np.array([start[leaf] for leaf in leaves])
    misses = int((current[first] * current[second] != target).sum())
    improved = True
    while improved:
        improved = False
        for k in range(len(leaves)):
            current[k] *= -1
            trial = int((current[first] * current[second] != target).sum())
            if trial < misses:
                misses, improved = trial, True
            else:
                current[k] *= -1
    return {leaf: int(current[position[leaf]]) for leaf in leaves}


def _fix_gauge(tree: DecompTree, leaf_signs: Dict[int, int]) -> Dict[Edge, int]:
    """Flip hidden nodes to minimize negative edges; ties keep a node unflipped"""
    base = {(p, c): (leaf_signs[c] if tree.is_leaf(c) else 1) for p, c in tree.edges}

    def negative(edge: Edge, flip_parent: int, flip_child: int) -> int:
        return int(base[edge] * (-1) ** (flip_parent + flip_child) < 0)

    cost: Dict[int, Tuple[float, float]] = {}
    for node in reversed(tree.preorder):
        if tree.is_leaf(node):
            cost[node] = (0.0, float("inf"))
            continue
        totals = []
        for flip in (0, 1):
            total = 0.0
            for child in tree.children[node]:
                total += min(cost[child][g] + negative((node, child), flip, g) for g in (0, 1))
            totals.append(total)
        cost[node] = (totals[0], totals[1])

    flips = {tree.root: 0 if cost[tree.root][0] <= cost[tree.root][1] else 1}
    for node in tree.preorder:
        for child in tree.children.get(node, ()):
            options = [cost[child][g] + negative((node, child), flips[node], g) for g in (0, 1)]
            flips[child] = 0 if options[0] <= options[1] else 1

    return {edge: base[edge] * (-1) ** (flips[edge[0]] + flips[edge[1]]) for edge in tree.edges}


# ---------------------------------------------------------------------------
# Leaf-hidden correlations and node fits
# ---------------------------------------------------------------------------

def leaf_hidden_correlations(tree: DecompTree, edges: EdgeSolution) -> LeafHiddenTable:
    """Path products from every leaf to every hidden node"""
    mapping = edges.as_mapping()
    leaves = tuple(sorted(tree.leaf_set))
    hidden = tree.internal_nodes
    values = np.zeros((len(leaves), len(hidden)))
    for row, leaf in enumerate(leaves):
        products = node_products(tree, mapping, leaf)
        values[row] = [products[node] for node in hidden]
    return LeafHiddenTable(leaves=leaves, hidden=hidden, values=values)


def node_correlations(p: np.ndarray, prior: float, conditional: np.ndarray) -> np.ndarray:
    """Leaf-hidden correlations implied by a prior and conditionals"""
    scale = np.sqrt(prior / (1.0 - prior))
    return (conditional - p) * scale / np.sqrt(p * (1.0 - p))


def canonical_node_solution(p: np.ndarray, rho_iw: np.ndarray) -> Tuple[float, np.ndarray, Tuple[float, float]]:
    """
    Zero-residual parameters with the prior closest to 0.5

    With a_i = rho_iw sqrt(p_i (1 - p_i)) every prior q admits the
    conditionals p_i + a_i sqrt((1 - q) / q); they stay inside [0, 1]
    exactly when sqrt((1 - q) / q) <= G, the tightest of the per-leaf
    bounds. Feasible priors form [1 / (1 + G^2), 1).

    Returns:
        (prior, conditionals, feasible prior interval)
    """
    a = rho_iw * np.sqrt(p * (1.0 - p))
    with np.errstate(divide="ignore"):
        bounds = np.where(a > 0, (1.0 - p) / a, np.where(a < 0, p / -a, np.inf))
    bound = float(bounds.min()) if bounds.size else float("inf")

    low = 0.0 if np.isinf(bound) else 1.0 / (1.0 + bound ** 2)
    low = max(low, PRIOR_BOUNDS[0])
    prior = min(max(0.5, low), PRIOR_BOUNDS[1])
    conditional = np.clip(p + a * np.sqrt((1.0 - prior) / prior), 0.0, 1.0)
    return prior, conditional, (low, PRIOR_BOUNDS[1])


def fit_hidden_node(
    node: int,
    p: np.ndarray,
    rho_iw: np.ndarray,
    config: Optional[Stage2Config] = None,
) -> Tuple[float, np.ndarray, float, bool, Tuple[float, float], List[List[float]]]:
    """
    Fit one hidden node by box-constrained multi-start L-BFGS-B

    The first start is p(w) = 0.5 with p(i|w) = p(i); the rest are drawn
    from a generator seeded by (seed, node). When the best residual is
    within tolerance, the canonical zero-residual solution is returned.

    Returns:
        (prior, conditionals, residual, converged, prior interval, histories)
    """
    config = config or Stage2Config()
    leaves = p.size
    sigma = np.sqrt(p * (1.0 - p))

    def objective(x):
        q, c = x[0], x[1:]
        scale = np.sqrt(q / (1.0 - q))
        residual = (c - p) * scale / sigma - rho_iw
        d_scale = 0.5 / (scale * (1.0 - q) ** 2)
        grad_q = np.sum(2.0 * residual * (c - p) / sigma) * d_scale
        grad_c = 2.0 * residual * scale / sigma
        return float(residual @ residual), np.concatenate(([grad_q], grad_c))

    rng = np.random.default_rng([config.seed, node])
    starts = [np.concatenate(([0.5], p))]
    for _ in range(config.fit_starts - 1):
        starts.append(np.concatenate(([rng.uniform(0.05, 0.95)], rng.uniform(0.0, 1.0, leaves))))

    bounds = [PRIOR_BOUNDS] + [(0.0, 1.0)] * leaves
    best_x, best_f = starts[0], objective(starts[0])[0]
    histories: List[List[float]] = []
    for x0 in starts:
        history = [objective(x0)[0]]
        result = minimize(
            objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
            callback=lambda xk, history=history: history.append(objective(xk)[0]),
            options={"maxiter": config.fit_max_iter, "ftol": 1e-15, "gtol": 1e-12},
        )
        histories.append(history)
        if result.fun < best_f:
            best_x, best_f = result.x, float(result.fun)
        if best_f <= config.fit_tolerance:
            break

    prior, conditional, interval = canonical_node_solution(p, rho_iw)
    canonical_f = objective(np.concatenate(([prior], conditional)))[0]
    if canonical_f <= config.fit_tolerance or canonical_f <= best_f:
        return prior, conditional, canonical_f, canonical_f <= config.fit_tolerance, interval, histories
    return float(best_x[0]), np.clip(best_x[1:], 0.0, 1.0), best_f, best_f <= config.fit_tolerance, interval, histories


def fit_node_parameters(
    matrix: CorrelationMatrix,
    table: LeafHiddenTable,
    config: Optional[Stage2Config] = None,
    strict: bool = True,
) -> NodeParameters:
    """
    Fit prior and conditionals for every hidden node

    Args:
        matrix: supplies the leaf marginals
        table: leaf-hidden correlations
        config: fit budget, tolerance, seed and workers
        strict: raise FitNotConverged instead of keeping the best iterate

    Raises:
        FitNotConverged: some node missed the tolerance and strict is set
    """
    config = config or Stage2Config()
    p = matrix.p[list(table.leaves)]

    def fit(node: int) -> NodeFit:
        prior, conditional, residual, converged, interval, histories = fit_hidden_node(
            node, p, table.column(node), config
        )
        return NodeFit(
            node=node,
            prior=float(prior),
            conditional={leaf: float(c) for leaf, c in zip(table.leaves, conditional)},
            residual=float(residual),
            converged=converged,
            non_unique=interval[1] - interval[0] > 0,
            prior_interval=interval,
            histories=histories,
        )

    workers = worker_cap(config.workers)
    if workers > 1 and len(table.hidden) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            fits = list(executor.map(fit, table.hidden))
    else:
        fits = [fit(node) for node in table.hidden]

    for node_fit in fits:
        if not node_fit.converged:
            if strict:
                raise FitNotConverged(node_fit.node, node_fit.residual, node_fit)
            logger.warning(f"Fit for hidden node {node_fit.node} stopped at residual {node_fit.residual:.3g}; keeping best iterate")
    return NodeParameters(fits={fit.node: fit for fit in fits})


def reconstruct_correlations(tree: DecompTree, edges: EdgeSolution, size: Optional[int] = None) -> np.ndarray:
    """Leaf-pair correlations implied by the edge solution"""
    return path_products(tree, edges.as_mapping(), size)


# ---------------------------------------------------------------------------
# Whole stage
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Stage2Result:
    """
    Everything Stage 2 produces

    Attributes:
        tree: the simplified tree the parameters refer to
        system: the path incidence system
        edges: edge correlations
        table: leaf-hidden correlations
        parameters: hidden-node fits
        reconstructed: path-product correlation matrix
        elapsed: wall time in seconds
    """
    tree: DecompTree
    system: PathSystem
    edges: EdgeSolution
    table: LeafHiddenTable
    parameters: NodeParameters
    reconstructed: np.ndarray
    elapsed: float = 0.0

    @property
    def max_reconstruction_error(self) -> float:
        return _max_offdiagonal_gap(self.reconstructed, self.system)

    def diagnostics(self) -> Dict[str, Any]:
        return {
            "residual_norm": self.edges.residual_norm,
            "fit_residual": self.parameters.fit_residual,
            "sign_violations": self.edges.sign_violations,
            "sign_solver": "parity extension for negative correlations",
            "max_reconstruction_error": self.max_reconstruction_error,
            "excluded_rows": [list(row) for row in self.system.excluded],
            "edges_over_unit": [list(edge) for edge in self.edges.over_unit],
            "non_unique_nodes": [node for node, fit in sorted(self.parameters.fits.items()) if fit.non_unique],
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tree": self.tree.to_dict(),
            "edges": self.edges.to_dict(),
            "parameters": self.parameters.to_dict(),
            "diagnostics": self.diagnostics(),
        }


def _max_offdiagonal_gap(reconstructed: np.ndarray, system: PathSystem) -> float:
    observed = np.exp(system.b) * system.sign_b
    predicted = np.array([reconstructed[i, j] for i, j in system.rows])
    return float(np.max(np.abs(predicted - observed))) if predicted.size else 0.0


def estimate_parameters(
    tree: DecompTree,
    matrix: CorrelationMatrix,
    config: Optional[Stage2Config] = None,
) -> Stage2Result:
    """
    Run Stage 2 on a Stage 1 tree

    Simplifies the tree, solves edge magnitudes and signs, reports edges
    above unit magnitude, fits every hidden node and reconstructs the
    correlation matrix. Fits that miss the tolerance keep their best
    iterate with a warning.
    """
    config = config or Stage2Config()
    started = time.perf_counter()

    simple = simplify(tree, config.simplification)
    system = build_path_system(simple, matrix, config.rho_min, config.exclude_small)
    log_abs, residual = solve_edge_magnitudes(system, config.cond_max)
    signs = solve_edge_signs(system)

    magnitudes = np.exp(log_abs)
    over = tuple(edge for edge, m in zip(system.edges, magnitudes) if m > 1.0 + config.edge_tolerance)
    if over:
        logger.warning(f"{len(over)} edge correlations exceed 1 in magnitude: {list(over)[:5]}")
        if config.clamp:
            magnitudes = np.minimum(magnitudes, 1.0)

    edges = EdgeSolution(
        edges=system.edges,
        log_abs=log_abs,
        sign=signs.signs,
        rho_edge=signs.signs * magnitudes,
        residual_norm=residual,
        sign_violations=len(signs.violations),
        over_unit=over,
        clamped=bool(over) and config.clamp,
    )
    table = leaf_hidden_correlations(simple, edges)
    parameters = fit_node_parameters(matrix, table, config, strict=False)
    reconstructed = reconstruct_correlations(simple, edges, matrix.n)

    result = Stage2Result(
        tree=simple,
        system=system,
        edges=edges,
        table=table,
        parameters=parameters,
        reconstructed=reconstructed,
        elapsed=time.perf_counter() - started,
    )
    logger.info(
        f"Stage 2 finished: {len(system.edges)} edges, residual {residual:.3g}, "
        f"max reconstruction error {result.max_reconstruction_error:.3g} in {result.elapsed:.3f}s"
    )
    return result
