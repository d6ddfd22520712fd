import json

import numpy as np
import pytest
from click.testing import CliRunner

from treedecomp import __version__
from treedecomp.core.correlation import save_matrix, save_samples
from treedecomp.core.exceptions import StuckState
from treedecomp.core.synth import exact_matrix, generate_model, sample_data
from treedecomp.main import main

from ..conftest import make_matrix


@pytest.fixture
def runner(monkeypatch):
    for name in ("TREEDECOMP_ERROR_MODE", "TREEDECOMP_TIE_POLICY", "TREEDECOMP_RHO_MIN", "TREEDECOMP_SEED", "LT_THREADS"):
        monkeypatch.delenv(name, raising=False)
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(main, [str(arg) for arg in args], obj={})


def test_version(runner):
    result = invoke(runner, "--version")
    assert result.exit_code == 0
    assert __version__ in result.output


def test_decompose_matrix(runner, tmp_path, quartet_matrix):
    source = tmp_path / "quartet.csv"
    save_matrix(quartet_matrix, source)
    out = tmp_path / "out"

    result = invoke(runner, "decompose", source, "-o", out, "--trace")
    assert result.exit_code == 0, result.output
    assert "Stage 1" in result.output
    assert {p.name for p in out.iterdir()} == {"tree.json", "tree.dot", "parameters.json", "diagnostics.json", "trace.json"}

    diagnostics = json.loads((out / "diagnostics.json").read_text())
    assert diagnostics["n"] == 4
    assert diagnostics["input"]["kind"] == "matrix"
    assert diagnostics["max_quartet_error"] < 1e-12
    assert diagnostics["stage1"]["steps"] == 1
    assert (out / "tree.dot").read_text().startswith("digraph tree {")

    parameters = json.loads((out / "parameters.json").read_text())
    rho = sorted(record["rho"] for record in parameters["edges"]["edges"])
    assert rho == pytest.approx([0.5, 0.6, 0.7, 0.8, 0.9])


def test_decompose_samples(runner, tmp_path):
    model = generate_model(5, 4)
    source = tmp_path / "samples.csv"
    source.write_text(save_samples(sample_data(model, 2000, 4)), encoding="utf-8")

    result = invoke(runner, "decompose", source, "-o", tmp_path / "out", "-q", "--laplace", "1")
    assert result.exit_code == 0, result.output
    diagnostics = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
    assert diagnostics["input"]["kind"] == "samples"
    assert diagnostics["config"]["correlation"]["laplace"] == 1.0
    assert not (tmp_path / "out" / "trace.json").exists()


def test_flags_reach_the_configuration(runner, tmp_path, quartet_matrix):
    source = tmp_path / "quartet.csv"
    save_matrix(quartet_matrix, source)
    result = invoke(
        runner, "decompose", source, "-o", tmp_path / "out", "-q",
        "--error-mode", "mean", "--tie-policy", "lexicographic", "--no-split-check", "--seed", "9",
    )
    assert result.exit_code == 0, result.output
    config = json.loads((tmp_path / "out" / "diagnostics.json").read_text())["config"]
    assert config["stage1"]["error_mode"] == "mean"
    assert config["stage1"]["tie_policy"] == "lexicographic"
    assert config["stage1"]["split_check"] is False
    assert config["stage2"]["seed"] == 9


def test_config_file(runner, tmp_path, quartet_matrix):
    source = tmp_path / "quartet.csv"
    save_matrix(quartet_matrix, source)
    settings = tmp_path / "settings.yaml"
    settings.write_text("stage2:\n  fit_starts: 3\n", encoding="utf-8")
    result = invoke(runner, "--config", settings, "decompose", source, "-o", tmp_path / "out", "-q")
    assert result.exit_code == 0, result.output
    config = json.loads((tmp_path / "out" / "diagnostics.json").read_text())["config"]
    assert config["stage2"]["fit_starts"] == 3


def test_input_error_exit_code(runner, tmp_path):
    source = tmp_path / "bad.csv"
    source.write_text("3\n1,0.5,0.5\n0.6,1,0.5\n0.5,0.5,1\n0.5,0.5,0.5\n", encoding="utf-8")
    result = invoke(runner, "decompose", source, "-o", tmp_path / "out")
    assert result.exit_code == 2
    assert "Error" in result.output
    assert not (tmp_path / "out").exists()


def test_bad_config_value_exit_code(runner, tmp_path, quartet_matrix):
    source = tmp_path / "quartet.csv"
    save_matrix(quartet_matrix, source)
    result = invoke(runner, "decompose", source, "-o", tmp_path / "out", "--rho-min", "-1")
    assert result.exit_code == 2


def test_numeric_error_exit_code(runner, tmp_path, quartet_matrix):
    rho = quartet_matrix.rho.copy()
    rho[0, 2] = rho[2, 0] = 0.0
    source = tmp_path / "zero.csv"
    save_matrix(make_matrix(rho, quartet_matrix.p), source)
    result = invoke(runner, "decompose", source, "-o", tmp_path / "out", "--strict-rows")
    assert result.exit_code == 3
    assert "Error" in result.output


def test_search_error_exit_code(runner, tmp_path, quartet_matrix, monkeypatch):
    def stuck(self, matrix):
        raise StuckState("forest cannot be advanced")

    monkeypatch.setattr("treedecomp.main.TreeDecomposer.decompose", stuck)
    source = tmp_path / "quartet.csv"
    save_matrix(quartet_matrix, source)
    result = invoke(runner, "decompose", source, "-o", tmp_path / "out")
    assert result.exit_code == 2
    assert "Error" in result.output


def test_unit_tolerance_reaches_the_loader(runner, tmp_path, quartet_matrix, monkeypatch):
    seen = []

    def loader(path, unit_tolerance):
        seen.append(unit_tolerance)
        return quartet_matrix

    monkeypatch.setattr("treedecomp.main.load_matrix", loader)
    source = tmp_path / "quartet.csv"
    save_matrix(quartet_matrix, source)
    settings = tmp_path / "settings.yaml"
    settings.write_text("correlation:\n  unit_tolerance: 1.0e-8\n", encoding="utf-8")
    result = invoke(runner, "--config", settings, "decompose", source, "-o", tmp_path / "out", "-q")
    assert result.exit_code == 0, result.output
    assert seen == [1e-8]


def test_simulate_is_deterministic(runner, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for target in (first, second):
        result = invoke(runner, "simulate", "--n", 6, "--seed", 11, "--rows", 50, "--eps", 0.001, "-o", target, "-q")
        assert result.exit_code == 0, result.output
    for name in ("model.json", "matrix.csv", "samples.csv"):
        assert (first / name).read_text() == (second / name).read_text()
    assert len((first / "samples.csv").read_text().splitlines()) == 51


def test_simulate_exact_matrix(runner, tmp_path):
    result = invoke(runner, "simulate", "--n", 5, "--seed", 2, "-o", tmp_path)
    assert result.exit_code == 0, result.output
    assert (tmp_path / "model.json").exists()
    text = (tmp_path / "matrix.csv").read_text()
    expected = save_matrix(exact_matrix(generate_model(5, 2)))
    assert text == expected


@pytest.mark.parametrize("args", [["--eps", "-0.5"], ["--rows", "0"]])
def test_simulate_rejects_bad_values(runner, tmp_path, args):
    result = invoke(runner, "simulate", "--n", 5, "-o", tmp_path, *args)
    assert result.exit_code == 2


def test_simulate_decompose_evaluate(runner, tmp_path):
    sim, out, report = tmp_path / "sim", tmp_path / "out", tmp_path / "report.json"
    assert invoke(runner, "simulate", "--n", 7, "--seed", 3, "--family", "composable", "-o", sim, "-q").exit_code == 0
    assert invoke(runner, "decompose", sim / "matrix.csv", "-o", out, "-q").exit_code == 0

    result = invoke(
        runner, "evaluate", "--model", sim / "model.json", "--tree", out / "tree.json",
        "--parameters", out / "parameters.json", "-o", report,
    )
    assert result.exit_code == 0, result.output
    data = json.loads(report.read_text())
    assert data["match"] is True
    assert data["max_edge_error"] <= 1e-8
    assert np.isfinite(data["max_prior_error"])


def test_evaluate_rejects_foreign_documents(runner, tmp_path):
    sim = tmp_path / "sim"
    invoke(runner, "simulate", "--n", 5, "-o", sim, "-q")
    result = invoke(runner, "evaluate", "--model", sim / "model.json", "--tree", sim / "model.json")
    assert result.exit_code == 2
