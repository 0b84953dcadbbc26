import datetime
import io
import os

import numpy as np
import pytest
import yaml

from speedwagon_clickgraph import config
from speedwagon_clickgraph.config import ExperimentConfig
from speedwagon_clickgraph.exceptions import ConfigurationError
from speedwagon_clickgraph.graphcm_model import Aggregation, CombinationKind


def test_defaults_are_valid():
    settings = ExperimentConfig()
    assert settings.combination == "expmul"
    assert settings.k_grid == (1, 2, 4, 8, 16, 32)


@pytest.mark.parametrize(
    "changes",
    [
        {"batch_size": 0},
        {"k": 0},
        {"lr": 0.0},
        {"l2": -1e-3},
        {"dropout": 1.0},
        {"hold_out_fraction": 1.0},
        {"lr_grid": ()},
        {"k_grid": (0, 2)},
        {"dropout_grid": (0.5, 1.0)},
        {"dtype": "float16"},
        {"combination": "add"},
        {"aggregation": "max"},
        {"sampling_policy": "greedy"},
        {"rank_by": "examination"},
    ]
)
def test_invalid_settings(changes):
    with pytest.raises(ConfigurationError):
        ExperimentConfig(**changes)


class TestLoadConfig:
    def test_yaml_values(self):
        settings = config.load_config(
            io.StringIO(
                "lr: 0.01\n"
                "k: 4\n"
                "use_q_gat: false\n"
                "lr_grid: [0.1, 0.01]\n"
                "combination: linear\n"
            )
        )
        assert settings.lr == 0.01
        assert settings.k == 4
        assert settings.use_q_gat is False
        assert settings.lr_grid == (0.1, 0.01)
        assert settings.combination == "linear"

    def test_yaml_exponent_strings_are_parsed(self):
        settings = config.load_config(io.StringIO("l2: 1e-4\n"))
        assert settings.l2 == pytest.approx(1e-4)

    def test_overrides_win(self):
        settings = config.load_config(
            io.StringIO("k: 4\n"), {"k": "16", "dropout": "0.25"}
        )
        assert settings.k == 16
        assert settings.dropout == 0.25

    @pytest.mark.parametrize(
        "text",
        ["- a\n- b\n", "unknown_setting: 3\n", "k: 2.5\n",
         "use_d_gat: sometimes\n", "k: [\n"],
        ids=["not-a-mapping", "unknown", "fractional-int", "bad-bool",
             "bad-yaml"]
    )
    def test_rejected_files(self, text):
        with pytest.raises(ConfigurationError):
            config.load_config(io.StringIO(text))

    def test_empty_file_gives_defaults(self):
        assert config.load_config(io.StringIO("")) == ExperimentConfig()

    def test_load_config_file(self, tmp_path):
        settings_file = tmp_path / "settings.yml"
        settings_file.write_text("hidden_size: 16\n", encoding="utf-8")
        settings = config.load_config_file(
            str(settings_file), {"query_dim": 8, "doc_dim": 8}
        )
        assert settings.hidden_size == 16
        assert settings.query_dim == 8

    def test_load_config_file_without_path(self):
        assert config.load_config_file(None) == ExperimentConfig()


class TestOverrides:
    def test_string_parsing_follows_field_type(self):
        settings = config.apply_overrides(
            ExperimentConfig(),
            {
                "use_neighbor_interaction": "no",
                "k_grid": "1, 2,3",
                "lr": "5e-4",
                "run_name": "ablation",
            }
        )
        assert settings.use_neighbor_interaction is False
        assert settings.k_grid == (1, 2, 3)
        assert settings.lr == 5e-4
        assert settings.run_name == "ablation"

    def test_assignments(self):
        assert config.parse_assignments(["max-epochs=3", "lr = 0.1"]) == {
            "max_epochs": "3", "lr": "0.1"
        }

    @pytest.mark.parametrize("assignment", ["lr", "=3"])
    def test_malformed_assignments(self, assignment):
        with pytest.raises(ConfigurationError):
            config.parse_assignments([assignment])


def test_model_config():
    model = ExperimentConfig(
        query_dim=8, doc_dim=8, heads=4, aggregation="concat",
        combination="linear"
    ).model_config(10, 20, 3, 5)
    assert model.query_vocab_size == 10
    assert model.gat.heads == 4
    assert model.gat.aggregation is Aggregation.CONCAT
    assert model.combination is CombinationKind.LINEAR


def test_model_config_rejects_incompatible_widths():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(query_dim=8, doc_dim=4).model_config(10, 20, 3, 5)


def test_numpy_dtype():
    assert ExperimentConfig(dtype="float64").numpy_dtype is np.float64


class TestRunDirectory:
    def test_relative_paths_use_home(self, monkeypatch, tmp_path):
        monkeypatch.setenv(config.CLICKGRAPH_HOME_VARIABLE, str(tmp_path))
        settings = ExperimentConfig(data_dir="data")
        assert settings.resolve(settings.data_dir) == \
            os.path.join(str(tmp_path), "data")
        assert settings.resolve("/abs/path") == "/abs/path"

    def test_timestamped_directory(self, monkeypatch, tmp_path):
        monkeypatch.setenv(config.CLICKGRAPH_HOME_VARIABLE, str(tmp_path))
        path = config.make_run_directory(
            ExperimentConfig(run_name="trial"),
            now=datetime.datetime(2024, 5, 6, 7, 8, 9)
        )
        assert path == os.path.join(
            str(tmp_path), "runs", "trial-20240506-070809"
        )
        assert os.path.isdir(path)

    def test_explicit_directory(self, tmp_path):
        target = tmp_path / "explicit"
        path = config.make_run_directory(
            ExperimentConfig(run_dir=str(target))
        )
        assert path == str(target)
        assert target.is_dir()


def test_manifest_records_settings_and_seeds(tmp_path):
    settings = ExperimentConfig(init_seed=3, sampler_seed=4)
    path = config.write_manifest(str(tmp_path), settings, {"stage": "train"})
    with open(path, encoding="utf-8") as read_file:
        manifest = yaml.safe_load(read_file)
    assert manifest["seeds"]["init"] == 3
    assert manifest["seeds"]["sampler"] == 4
    assert manifest["config"]["k_grid"] == [1, 2, 4, 8, 16, 32]
    assert manifest["stage"] == "train"
    assert "numpy" in manifest["versions"]
    assert config.load_config(overrides=manifest["config"]) == settings
