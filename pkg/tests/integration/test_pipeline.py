"""End-to-end runs of ingestion, Stage 1, Stage 2 and evaluation"""

import numpy as np
import pytest

from treedecomp.core.correlation import compute_correlations, load_matrix, save_matrix
from treedecomp.core.evaluation import compare_models
from treedecomp.core.stage1 import decompose, replay_trace
from treedecomp.core.stage2 import estimate_parameters, reconstruct_correlations
from treedecomp.core.synth import exact_matrix, generate_model, perturb, sample_data
from treedecomp.core.tree import quartet_topology_error, same_topology
from treedecomp.utils.config import Stage2Config, SynthConfig


@pytest.mark.parametrize("seed", range(4))
def test_exact_pipeline(seed, tmp_path):
    model = generate_model(8, seed, SynthConfig(family="composable"))
    path = tmp_path / "matrix.csv"
    save_matrix(exact_matrix(model), path)
    matrix = load_matrix(path)

    tree, trace = decompose(matrix)
    assert same_topology(tree, model.topology)
    assert replay_trace(matrix, trace).ok

    result = estimate_parameters(tree, matrix)
    reconstructed = reconstruct_correlations(result.tree, result.edges, matrix.n)
    np.testing.assert_allclose(reconstructed, matrix.rho, atol=1e-8)

    report = compare_models(model, tree, result.edges, result.parameters, result.tree)
    assert report.match
    assert report.max_edge_error <= 1e-8


def test_negative_edges_survive_the_pipeline():
    model = generate_model(7, 5, SynthConfig(family="composable", negative_prob=0.5))
    matrix = exact_matrix(model)
    tree, _ = decompose(matrix)
    result = estimate_parameters(tree, matrix)
    assert result.edges.sign_violations == 0
    assert result.max_reconstruction_error < 1e-8
    assert compare_models(model, tree, result.edges).max_edge_error <= 1e-8


def test_small_noise_keeps_the_topology():
    model = generate_model(6, 2, SynthConfig(family="composable", rho_low=0.6))
    matrix = perturb(exact_matrix(model), 1e-5, 2)
    tree, _ = decompose(matrix)
    assert same_topology(tree, model.topology)
    result = estimate_parameters(tree, matrix)
    assert result.max_reconstruction_error < 1e-3


def test_samples_to_parameters():
    model = generate_model(5, 6, SynthConfig(rho_low=0.7))
    matrix = compute_correlations(sample_data(model, 100_000, [6, 1]))
    tree, _ = decompose(matrix)
    result = estimate_parameters(tree, matrix, Stage2Config(clamp=True))
    assert same_topology(tree, model.topology)
    assert np.all(np.abs(result.edges.rho_edge) <= 1.0)
    assert quartet_topology_error(matrix, tree) < 0.02
