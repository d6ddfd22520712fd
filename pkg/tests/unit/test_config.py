import json
from pathlib import Path

import pytest

from treedecomp.core.exceptions import ConfigError
from treedecomp.core.models import ErrorMode, SimplificationPolicy, TiePolicy
from treedecomp.utils.config import Config, Stage1Config, Stage2Config, SynthConfig, worker_cap

DEFAULT_FILE = Path(__file__).resolve().parents[2] / "config" / "default_config.yaml"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("TREEDECOMP_ERROR_MODE", "TREEDECOMP_TIE_POLICY", "TREEDECOMP_RHO_MIN", "TREEDECOMP_SEED", "LT_THREADS"):
        monkeypatch.delenv(name, raising=False)


def test_defaults():
    config = Config.load()
    assert config.stage1.error_mode is ErrorMode.MAX
    assert config.stage1.tie_policy is TiePolicy.PRECEDENCE
    assert config.stage2.simplification is SimplificationPolicy.SUPPRESS_DEGREE_2
    assert config.stage2.rho_min == 1e-6
    assert config.synth.family == "uniform"


def test_shipped_file_matches_defaults():
    assert Config.load(DEFAULT_FILE).to_dict() == Config().to_dict()


def test_yaml_file(tmp_path):
    path = tmp_path / "settings.yaml"
    path.write_text("stage1:\n  tie_policy: lexicographic\nstage2:\n  clamp: true\n", encoding="utf-8")
    config = Config.load(path)
    assert config.stage1.tie_policy is TiePolicy.LEXICOGRAPHIC
    assert config.stage2.clamp is True
    assert config.stage1.error_mode is ErrorMode.MAX


def test_json_file(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({"synth": {"family": "composable", "rho_low": 0.4}}), encoding="utf-8")
    config = Config.load(path)
    assert config.synth == SynthConfig(family="composable", rho_low=0.4)


@pytest.mark.parametrize("text", [
    "unknown:\n  key: 1\n",
    "stage1:\n  colour: red\n",
    "stage1: [1, 2]\n",
    "stage2:\n  cond_max: 1.0\n",
    "stage1:\n  error_mode: median\n",
    "- just\n- a list\n",
])
def test_bad_files(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        Config.load(path)


def test_unreadable_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        Config.load(path)


def test_environment_overrides_file(tmp_path, monkeypatch):
    path = tmp_path / "settings.yaml"
    path.write_text("stage1:\n  error_mode: max\n", encoding="utf-8")
    monkeypatch.setenv("TREEDECOMP_ERROR_MODE", "mean")
    monkeypatch.setenv("TREEDECOMP_SEED", "17")
    config = Config.load(path)
    assert config.stage1.error_mode is ErrorMode.MEAN
    assert config.stage2.seed == 17


def test_bad_environment_number(monkeypatch):
    monkeypatch.setenv("TREEDECOMP_RHO_MIN", "tiny")
    with pytest.raises(ConfigError):
        Config.load()


def test_thread_cap(monkeypatch):
    config = Config()
    config.update("stage1", workers=8)
    monkeypatch.setenv("LT_THREADS", "2")
    assert worker_cap(8) == 2
    assert worker_cap(1) == 1
    config._load_from_env()
    assert config.stage1.workers == 2


def test_thread_cap_must_be_positive(monkeypatch):
    monkeypatch.setenv("LT_THREADS", "0")
    with pytest.raises(ConfigError):
        Config.load()


def test_update_ignores_unset_values():
    config = Config()
    config.update("stage2", rho_min=None, seed=3)
    assert config.stage2.rho_min == 1e-6
    assert config.stage2.seed == 3


def test_section_validation():
    with pytest.raises(ConfigError):
        Stage1Config(epsilon_tie=-1)
    with pytest.raises(ConfigError):
        Stage2Config(fit_starts=0)
    with pytest.raises(ConfigError):
        SynthConfig(rho_low=0.9, rho_high=0.3)


def test_to_dict_is_json_serializable():
    data = Config().to_dict()
    assert json.loads(json.dumps(data)) == data
    assert data["stage2"]["simplification"] == "suppress-degree-2"
