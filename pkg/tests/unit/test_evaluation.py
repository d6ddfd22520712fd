import pytest

from treedecomp.core.evaluation import compare_models, edge_bipartitions, node_signatures
from treedecomp.core.exceptions import SchemaError
from treedecomp.core.stage1 import decompose
from treedecomp.core.stage2 import estimate_parameters
from treedecomp.core.synth import exact_matrix, generate_model
from treedecomp.core.tree import DecompTree
from treedecomp.utils.config import SynthConfig


@pytest.fixture
def recovered():
    model = generate_model(7, 1, SynthConfig(family="composable"))
    matrix = exact_matrix(model)
    tree, _ = decompose(matrix)
    return model, tree, estimate_parameters(tree, matrix)


def test_bipartitions_ignore_rooting(quartet_tree, rooted_quartet_tree):
    expected = {frozenset({1, 2, 3}), frozenset({1}), frozenset({2}), frozenset({3}), frozenset({2, 3})}
    assert set(edge_bipartitions(quartet_tree).values()) == expected
    # the two root edges of the rooted form induce the same split
    assert set(edge_bipartitions(rooted_quartet_tree).values()) == expected


def test_node_signatures(quartet_tree):
    signatures = node_signatures(quartet_tree)
    assert frozenset({2, 3}) in signatures[4]
    assert frozenset({2, 3}) in signatures[5]
    assert len(signatures[4]) == len(signatures[5]) == 3


def test_own_recovery_matches(recovered):
    model, tree, result = recovered
    report = compare_models(model, tree, result.edges, result.parameters, result.tree)
    assert report.match
    assert len(report.edges) == 2 * model.n - 3
    assert report.max_edge_error <= 1e-8
    assert len(report.priors) == model.n - 2
    assert all(row.recovered is not None for row in report.priors)


def test_topology_only(recovered):
    model, tree, _ = recovered
    report = compare_models(model, tree)
    assert report.match
    assert report.edges == [] and report.priors == []
    assert report.max_edge_error is None
    assert set(report.to_dict()) == {"match", "n", "max_edge_error", "max_prior_error", "edges", "priors"}


def test_wrong_topology():
    model = generate_model(4, 0)
    truth = model.topology
    for candidate in (
        DecompTree(root=4, children={4: (0, 1, 5), 5: (2, 3)}),
        DecompTree(root=4, children={4: (0, 2, 5), 5: (1, 3)}),
        DecompTree(root=4, children={4: (0, 3, 5), 5: (1, 2)}),
    ):
        report = compare_models(model, candidate)
        assert report.match == (candidate.splits() == truth.splits())


def test_leaf_mismatch(recovered):
    model, _, _ = recovered
    with pytest.raises(SchemaError):
        compare_models(model, DecompTree(root=4, children={4: (0, 1, 5), 5: (2, 3)}))
