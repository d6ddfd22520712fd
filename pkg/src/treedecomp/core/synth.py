"""
treedecomp - Synthetic Models

Ground-truth tree models for experiments and tests: random topologies,
conditional tables that hit target edge correlations, exact and sampled
data, noise, and the exhaustive small-n topology oracle.

Unrooted binary topologies are handled as edge masks. With leaf 0 as the
anchor, every edge is stored as the bitmask of leaves on its far side, so
inserting leaf x on edge M turns M into M and M|x, adds the pendant edge
{x}, and sets bit x on every edge whose mask strictly contains M.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.config import Stage1Config, SynthConfig
from .errors import quartet_errors
from .exceptions import SchemaError, SynthError, TooLarge, TooSmall
from .models import CorrelationMatrix, SampleTable
from .stage1 import decompose
from .tree import (
    DecompTree,
    Edge,
    is_composable,
    leaf_quartets,
    path_products,
    quartet_pairings,
    same_topology,
    simplify,
)

logger = logging.getLogger(__name__)

ORACLE_MAX_N = 8
MAX_TABLE_ATTEMPTS = 1000
MAX_TOPOLOGY_ATTEMPTS = 10000

SeedLike = Union[None, int, Sequence[int]]


@dataclass(eq=False)
class GeneratorModel:
    """
    A tree-structured binary model with known parameters

    Attributes:
        topology: rooted at a hidden node; leaves are variables 0..n-1
        edge_rho: (parent, child) -> edge correlation
        marginal: node -> P(node = 1), for leaves and hidden nodes
        conditional: (parent, child) -> (P(child=1 | parent=1), P(child=1 | parent=0))
    """
    topology: DecompTree
    edge_rho: Dict[Edge, float]
    marginal: Dict[int, float]
    conditional: Dict[Edge, Tuple[float, float]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.topology.size

    @property
    def prior(self) -> Dict[int, float]:
        """Hidden node -> P(w = 1)"""
        return {node: self.marginal[node] for node in self.topology.internal_nodes}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "tree": self.topology.to_dict(),
            "edges": [
                {
                    "parent": p,
                    "child": c,
                    "rho": self.edge_rho[(p, c)],
                    "p_given_1": self.conditional[(p, c)][0],
                    "p_given_0": self.conditional[(p, c)][1],
                }
                for p, c in self.topology.edges
            ],
            "marginal": {str(node): value for node, value in sorted(self.marginal.items())},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GeneratorModel":
        try:
            topology = DecompTree.from_dict(data["tree"])
            edge_rho, conditional = {}, {}
            for record in data["edges"]:
                edge = (int(record["parent"]), int(record["child"]))
                edge_rho[edge] = float(record["rho"])
                conditional[edge] = (float(record["p_given_1"]), float(record["p_given_0"]))
            marginal = {int(node): float(value) for node, value in data["marginal"].items()}
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed model document: {e}") from None

        if set(edge_rho) != set(topology.edges):
            raise SchemaError("model edges do not match its tree")
        if set(marginal) != set(topology.nodes):
            raise SchemaError("model marginals do not cover every node")
        return cls(topology=topology, edge_rho=edge_rho, marginal=marginal, conditional=conditional)


# ---------------------------------------------------------------------------
# Topologies
# ---------------------------------------------------------------------------

def _initial_masks() -> List[int]:
    # star on leaves 0, 1, 2: edge to leaf 0 carries {1, 2}
    return [0b110, 0b010, 0b100]


def _insert(masks: Sequence[int], position: int, leaf: int) -> List[int]:
    target = masks[position]
    bit = 1 << leaf
    inserted = []
    for index, mask in enumerate(masks):
        if index == position:
            inserted.extend((mask, mask | bit))
        elif mask & target == target and mask != target:
            inserted.append(mask | bit)
        else:
            inserted.append(mask)
    inserted.append(bit)
    return inserted


def _all_masks(n: int) -> Iterator[List[int]]:
    def grow(masks: List[int], leaf: int) -> Iterator[List[int]]:
        if leaf == n:
            yield masks
            return
        for position in range(len(masks)):
            yield from grow(_insert(masks, position, leaf), leaf + 1)

    yield from grow(_initial_masks(), 3)


def tree_from_masks(masks: Sequence[int], n: int) -> DecompTree:
    """
    Root an edge-mask topology at the hidden node next to leaf 0

    Hidden nodes are numbered n, n+1, ... by decreasing clade size, then by
    mask value.
    """
    clades = sorted({m for m in masks if bin(m).count("1") >= 2}, key=lambda m: (-bin(m).count("1"), m))
    ids = {mask: n + index for index, mask in enumerate(clades)}
    for leaf in range(n):
        ids.setdefault(1 << leaf, leaf)

    full = clades[0]
    children: Dict[int, List[int]] = {ids[full]: [0]}
    for mask in sorted(ids, key=lambda m: (-bin(m).count("1"), m)):
        if mask in (full, 1):
            continue
        parent = min((c for c in clades if c != mask and c & mask == mask), key=lambda c: bin(c).count("1"))
        children.setdefault(ids[parent], []).append(ids[mask])
    return DecompTree(root=ids[full], children={node: tuple(sorted(kids)) for node, kids in children.items()})


def enumerate_topologies(n: int) -> Iterator[DecompTree]:
    """Every unrooted binary topology over leaves 0..n-1, (2n-5)!! in all"""
    if n < 3:
        raise TooSmall(n)
    for masks in _all_masks(n):
        yield tree_from_masks(masks, n)


def topology_count(n: int) -> int:
    count = 1
    for k in range(3, 2 * n - 4, 2):
        count *= k
    return count


def random_topology(n: int, rng: np.random.Generator) -> DecompTree:
    """Uniform random unrooted binary topology by stepwise random insertion"""
    if n < 3:
        raise TooSmall(n)
    masks = _initial_masks()
    for leaf in range(3, n):
        masks = _insert(masks, int(rng.integers(len(masks))), leaf)
    return tree_from_masks(masks, n)


# ---------------------------------------------------------------------------
# Models and data
# ---------------------------------------------------------------------------

def conditional_table(rho: float, p_parent: float, p_child: float) -> Optional[Tuple[float, float]]:
    """
    P(child=1 | parent=1) and P(child=1 | parent=0) giving correlation rho

    Returns:
        The pair, or None when no valid 2x2 table has these margins and rho
    """
    joint = p_parent * p_child + rho * np.sqrt(p_parent * (1 - p_parent) * p_child * (1 - p_child))
    given_one = joint / p_parent
    given_zero = (p_child - joint) / (1 - p_parent)
    if not (0.0 <= given_one <= 1.0 and 0.0 <= given_zero <= 1.0):
        return None
    return float(given_one), float(given_zero)


def generate_model(
    n: int,
    seed: SeedLike = None,
    config: Optional[SynthConfig] = None,
) -> GeneratorModel:
    """
    Draw a random tree model

    Edge magnitudes are uniform in [rho_low, rho_high], negative with
    probability negative_prob. The root prior and every child marginal are
    uniform in [prior_low, prior_high]; a child marginal that admits no
    conditional table for its edge correlation is redrawn, and after
    repeated failures the edge correlation is redrawn as well.

    Args:
        n: leaf count, at least 3
        seed: generator seed
        config: bounds, sign probability and topology family

    Raises:
        TooSmall: n < 3
        SynthError: no composable topology turned up in MAX_TOPOLOGY_ATTEMPTS draws
    """
    if n < 3:
        raise TooSmall(n)
    config = config or SynthConfig()
    rng = np.random.default_rng(seed)

    topology = random_topology(n, rng)
    if config.family == "composable":
        attempts = 1
        while not is_composable(topology):
            if attempts >= MAX_TOPOLOGY_ATTEMPTS:
                raise SynthError(f"no composable topology over {n} leaves after {attempts} draws")
            topology = random_topology(n, rng)
            attempts += 1

    def draw_rho() -> float:
        magnitude = rng.uniform(config.rho_low, config.rho_high)
        return float(-magnitude if rng.random() < config.negative_prob else magnitude)

    marginal = {topology.root: float(rng.uniform(config.prior_low, config.prior_high))}
    edge_rho: Dict[Edge, float] = {}
    conditional: Dict[Edge, Tuple[float, float]] = {}
    for parent, child in topology.edges:
        rho = draw_rho()
        table = None
        attempts = 0
        while table is None:
            p_child = float(rng.uniform(config.prior_low, config.prior_high))
            table = conditional_table(rho, marginal[parent], p_child)
            attempts += 1
            if table is None and attempts % MAX_TABLE_ATTEMPTS == 0:
                rho = draw_rho()
        edge_rho[(parent, child)] = rho
        marginal[child] = p_child
        conditional[(parent, child)] = table

    logger.debug(f"Generated {config.family} model over {n} leaves (seed {seed})")
    return GeneratorModel(topology=topology, edge_rho=edge_rho, marginal=marginal, conditional=conditional)


def exact_matrix(model: GeneratorModel) -> CorrelationMatrix:
    """Path-product correlations with the model's leaf marginals"""
    rho = path_products(model.topology, model.edge_rho, model.n)
    p = np.array([model.marginal[leaf] for leaf in range(model.n)])
    return CorrelationMatrix(rho=rho, p=p)


def sample_data(model: GeneratorModel, rows: int, seed: SeedLike = None) -> SampleTable:
    """Ancestral sampling: root first, then every child given its parent"""
    if rows < 1:
        raise ValueError(f"rows must be >= 1, got {rows}")
    rng = np.random.default_rng(seed)
    tree = model.topology
    values = {tree.root: rng.random(rows) < model.marginal[tree.root]}
    for parent, child in tree.edges:
        given_one, given_zero = model.conditional[(parent, child)]
        chance = np.where(values[parent], given_one, given_zero)
        values[child] = rng.random(rows) < chance
    columns = np.column_stack([values[leaf] for leaf in range(model.n)])
    return SampleTable(rows=columns.astype(np.int8))


def perturb(matrix: CorrelationMatrix, eps: float, seed: SeedLike = None) -> CorrelationMatrix:
    """Add independent uniform [-eps, eps] noise to every off-diagonal pair"""
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    if eps == 0:
        return matrix
    rng = np.random.default_rng(seed)
    noise = np.triu(rng.uniform(-eps, eps, size=matrix.rho.shape), k=1)
    rho = np.clip(matrix.rho + noise + noise.T, -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    return CorrelationMatrix(rho=rho, p=matrix.p.copy())


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    tree: DecompTree
    score: float
    scanned: int


def exhaustive_search(matrix: CorrelationMatrix) -> OracleResult:
    """
    Score every unrooted binary topology by total quartet error

    Raises:
        TooSmall: n < 3
        TooLarge: n > 8
    """
    n = matrix.n
    if n < 3:
        raise TooSmall(n)
    if n > ORACLE_MAX_N:
        raise TooLarge(n, ORACLE_MAX_N)
    if n == 3:
        return OracleResult(tree=tree_from_masks(_initial_masks(), 3), score=0.0, scanned=1)

    all_masks = np.array(list(_all_masks(n)), dtype=np.int64)
    sizes = np.vectorize(lambda m: bin(int(m)).count("1"))(all_masks)
    nontrivial = (sizes >= 2) & (sizes <= n - 2)
    splits = all_masks[nontrivial].reshape(all_masks.shape[0], n - 3)
    membership = ((splits[..., None] >> np.arange(n)) & 1).astype(bool)

    quartets = leaf_quartets(range(n))
    pairing = quartet_pairings(membership, quartets)
    errors = quartet_errors(matrix.rho, quartets)
    scores = errors[np.arange(len(quartets)), pairing].sum(axis=-1)

    best = int(np.argmin(scores))
    logger.info(f"Exhaustive search scanned {len(scores)} topologies; best total quartet error {scores[best]:.3g}")
    return OracleResult(tree=tree_from_masks(all_masks[best].tolist(), n), score=float(scores[best]), scanned=len(scores))


def exhaustive_best_tree(matrix: CorrelationMatrix) -> DecompTree:
    return exhaustive_search(matrix).tree


def oracle_agreement(
    sizes: Sequence[int],
    noise_levels: Sequence[float],
    seeds: Sequence[int],
    stage1: Optional[Stage1Config] = None,
    synth: Optional[SynthConfig] = None,
) -> List[Dict[str, Any]]:
    """
    Greedy-versus-oracle topology agreement on perturbed exact matrices

    Returns:
        One row per (n, eps): {"n", "eps", "runs", "agree", "rate"}
    """
    synth = synth or SynthConfig(family="composable")
    rows = []
    for n in sizes:
        for eps in noise_levels:
            agree = 0
            for seed in seeds:
                model = generate_model(n, seed, synth)
                matrix = perturb(exact_matrix(model), eps, [seed, 2])
                greedy, _ = decompose(matrix, stage1)
                if same_topology(simplify(greedy), exhaustive_best_tree(matrix)):
                    agree += 1
            rows.append({"n": n, "eps": eps, "runs": len(seeds), "agree": agree, "rate": agree / len(seeds)})
            logger.info(f"Oracle agreement n={n} eps={eps}: {agree}/{len(seeds)}")
    return rows
