"""
treedecomp - Model Evaluation

Compares a recovered tree (and optionally its Stage 2 parameters) against
the generator model it was recovered from. Trees are matched as unrooted
topologies; edges are matched by the leaf bipartition they induce and
hidden nodes by the set of bipartitions around them, so node ids and root
placement never matter.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

from .exceptions import SchemaError
from .stage2 import EdgeSolution, NodeParameters
from .synth import GeneratorModel
from .tree import DecompTree, Edge, same_topology, simplify

logger = logging.getLogger(__name__)

Bipartition = FrozenSet[int]


def edge_bipartitions(tree: DecompTree) -> Dict[Edge, Bipartition]:
    """Every edge keyed to the side of its bipartition without the smallest leaf"""
    anchor = min(tree.leaf_set)
    result = {}
    for parent, child in tree.edges:
        clade = tree.clade(child)
        result[(parent, child)] = clade if anchor not in clade else tree.leaf_set - clade
    return result


def node_signatures(tree: DecompTree) -> Dict[int, FrozenSet[Bipartition]]:
    """Hidden node -> bipartitions of its incident edges"""
    bipartitions = edge_bipartitions(tree)
    signatures: Dict[int, set] = {node: set() for node in tree.internal_nodes}
    for (parent, child), side in bipartitions.items():
        signatures[parent].add(side)
        if child in signatures:
            signatures[child].add(side)
    return {node: frozenset(sides) for node, sides in signatures.items()}


@dataclass
class EdgeComparison:
    split: Tuple[int, ...]
    expected: float
    recovered: Optional[float]

    @property
    def error(self) -> Optional[float]:
        if self.recovered is None:
            return None
        return abs(abs(self.recovered) - abs(self.expected))


@dataclass
class PriorComparison:
    node: int
    expected: float
    recovered: Optional[float]

    @property
    def error(self) -> Optional[float]:
        return None if self.recovered is None else abs(self.recovered - self.expected)


@dataclass
class EvaluationReport:
    """
    Outcome of comparing a recovery with its generator

    Attributes:
        match: unrooted topologies agree after suppress-degree-2
        edges: per generator edge, |rho| expected versus recovered
        priors: per generator hidden node, prior expected versus fitted
    """
    match: bool
    n: int
    edges: List[EdgeComparison] = field(default_factory=list)
    priors: List[PriorComparison] = field(default_factory=list)

    @property
    def max_edge_error(self) -> Optional[float]:
        errors = [row.error for row in self.edges if row.error is not None]
        return max(errors) if errors else None

    @property
    def max_prior_error(self) -> Optional[float]:
        errors = [row.error for row in self.priors if row.error is not None]
        return max(errors) if errors else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "match": self.match,
            "n": self.n,
            "max_edge_error": self.max_edge_error,
            "max_prior_error": self.max_prior_error,
            "edges": [
                {"split": list(row.split), "expected": row.expected, "recovered": row.recovered, "error": row.error}
                for row in self.edges
            ],
            "priors": [
                {"node": row.node, "expected": row.expected, "recovered": row.recovered, "error": row.error}
                for row in self.priors
            ],
        }


def compare_models(
    model: GeneratorModel,
    tree: DecompTree,
    edges: Optional[EdgeSolution] = None,
    parameters: Optional[NodeParameters] = None,
    fitted_tree: Optional[DecompTree] = None,
) -> EvaluationReport:
    """
    Compare a recovered topology and parameters with the generator

    Args:
        model: generator model
        tree: recovered tree (rooted Stage 1 output or simplified)
        edges: recovered edge correlations, keyed on fitted_tree's edges
        parameters: fitted hidden-node parameters on fitted_tree
        fitted_tree: the simplified tree edges and parameters refer to;
            defaults to simplify(tree)

    Raises:
        SchemaError: the trees cover different leaf sets
    """
    if tree.leaf_set != model.topology.leaf_set:
        raise SchemaError(
            f"recovered tree has {tree.size} leaves, model has {model.n}"
        )

    truth = simplify(model.topology)
    recovered = fitted_tree or simplify(tree)
    if recovered.leaf_set != truth.leaf_set:
        raise SchemaError("fitted tree and model cover different leaves")
    match = same_topology(truth, simplify(tree))
    report = EvaluationReport(match=match, n=model.n)

    if edges is not None:
        rho_by_side = {edge_bipartitions(recovered)[edge]: value for edge, value in edges.as_mapping().items()}
        # a generator edge into a degree-2 node maps to the same bipartition as its neighbor
        expected = {}
        for edge, side in edge_bipartitions(model.topology).items():
            expected.setdefault(side, 1.0)
            expected[side] *= model.edge_rho[edge]
        for side, value in sorted(expected.items(), key=lambda item: (len(item[0]), sorted(item[0]))):
            report.edges.append(EdgeComparison(split=tuple(sorted(side)), expected=value, recovered=rho_by_side.get(side)))

    if parameters is not None:
        fitted = {signature: node for node, signature in node_signatures(recovered).items()}
        truth_signatures = node_signatures(model.topology)
        for node in model.topology.internal_nodes:
            match_node = fitted.get(truth_signatures[node])
            value = parameters.fits[match_node].prior if match_node in parameters.fits else None
            report.priors.append(PriorComparison(node=node, expected=model.marginal[node], recovered=value))

    logger.info(
        f"Evaluation: topology match {match}, max edge error {report.max_edge_error}, "
        f"max prior error {report.max_prior_error}"
    )
    return report
