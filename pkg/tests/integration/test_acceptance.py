"""Seeded recovery experiments over many generator models"""

import time

import numpy as np
import pytest

from treedecomp.core.correlation import compute_correlations
from treedecomp.core.stage1 import TreeDecomposer, decompose, replay_trace
from treedecomp.core.stage2 import estimate_parameters
from treedecomp.core.synth import exact_matrix, generate_model, oracle_agreement, sample_data
from treedecomp.core.evaluation import compare_models
from treedecomp.core.tree import quartet_topology_error, same_topology
from treedecomp.utils.config import SynthConfig

pytestmark = pytest.mark.slow

COMPOSABLE = SynthConfig(family="composable")
SIGNED = SynthConfig(family="composable", negative_prob=0.3)

# smallest greedy/oracle agreement accepted in any (n, eps) cell
AGREEMENT_FLOOR = {0.0: 1.0, 0.001: 0.7, 0.005: 0.4, 0.01: 0.2}


def exact_instances():
    for index in range(200):
        n = 4 + index % 9
        yield n, index, generate_model(n, index, COMPOSABLE)


def test_exact_recovery():
    failures = []
    for n, seed, model in exact_instances():
        matrix = exact_matrix(model)
        tree, trace = decompose(matrix)
        if not same_topology(tree, model.topology) or quartet_topology_error(matrix, tree) >= 1e-9:
            failures.append((n, seed))
        assert len(trace.steps) <= n - 1, (n, seed)
        assert replay_trace(matrix, trace).ok, (n, seed)
    assert failures == []


def test_exact_parameters():
    for n, seed, model in exact_instances():
        matrix = exact_matrix(model)
        tree, _ = decompose(matrix)
        result = estimate_parameters(tree, matrix)
        assert result.max_reconstruction_error <= 1e-8, (n, seed)
        assert compare_models(model, tree, result.edges).max_edge_error <= 1e-8, (n, seed)


def test_signs_are_reproduced():
    for index in range(100):
        n = 4 + index % 7
        model = generate_model(n, 1000 + index, SIGNED)
        matrix = exact_matrix(model)
        tree, _ = decompose(matrix)
        result = estimate_parameters(tree, matrix)
        upper = np.triu_indices(n, k=1)
        assert np.array_equal(np.sign(result.reconstructed[upper]), np.sign(matrix.rho[upper])), (n, index)


def test_oracle_agreement_under_noise():
    levels = sorted(AGREEMENT_FLOOR)
    rows = oracle_agreement(range(5, 9), levels, range(50))
    assert len(rows) == 4 * len(levels)
    for row in rows:
        assert row["runs"] == 50
        assert row["rate"] >= AGREEMENT_FLOOR[row["eps"]], row

    means = [np.mean([row["rate"] for row in rows if row["eps"] == eps]) for eps in levels]
    for lower, higher in zip(means, means[1:]):
        assert higher <= lower + 0.05, means


@pytest.mark.parametrize("n", [6, 9, 12, 15])
def test_evaluations_stay_under_n_to_the_fifth(n):
    model = generate_model(n, n, COMPOSABLE)
    decomposer = TreeDecomposer()
    tree, trace = decomposer.decompose(exact_matrix(model))
    assert same_topology(tree, model.topology)
    assert 0 < trace.split_evaluations < trace.evaluations == decomposer.evaluations
    assert trace.evaluations <= n ** 5


def test_fifteen_leaves():
    model = generate_model(15, 15, COMPOSABLE)
    matrix = exact_matrix(model)
    timings = []
    for _ in range(3):
        started = time.perf_counter()
        tree, trace = decompose(matrix)
        estimate_parameters(tree, matrix)
        timings.append(time.perf_counter() - started)
    assert min(timings) < 1.0
    assert len(trace.steps) <= 14
    assert tree.leaf_set == frozenset(range(15))
    assert same_topology(tree, model.topology)


def test_finite_samples():
    model = generate_model(8, 0, SynthConfig(family="composable", rho_low=0.7))
    matches = 0
    for seed in range(20):
        matrix = compute_correlations(sample_data(model, 100_000, [seed, 1]))
        tree, _ = decompose(matrix)
        matches += same_topology(tree, model.topology)
    assert matches >= 18
