"""Tests for experiment config parsing, validation and the resolved snapshot."""

import json
from pathlib import Path

import pytest

from pdpm_lab.config import ExperimentConfig, dump_config, load_config, parse_config
from pdpm_lab.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def field_names(exc_info):
    return {name for name, _ in exc_info.value.fields}


class TestParseConfig:
    def test_empty_mapping_gives_defaults(self):
        config = parse_config({})
        assert config.dataset.name == "grid25"
        assert config.train.k == 1
        assert config.train.total_generator_steps == 10_000
        assert config.metrics.mse_threshold == 1e-4
        assert config.seed_list() == [0, 1, 2, 3, 4]

    def test_critic_steps_resolved_for_wgan(self):
        assert parse_config({"train": {"objective": "wgan_gp"}}).train.k == 5
        assert parse_config({"train": {"objective": "wgan_gp", "k": 3}}).train.k == 3

    def test_integers_accepted_for_floats(self):
        config = parse_config({"train": {"lam": 2, "s": 3}, "lambdas": [0, 1, 10]})
        assert config.train.lam == 2.0 and isinstance(config.train.lam, float)
        assert config.lambdas == [0.0, 1.0, 10.0]

    def test_single_lambda_becomes_list(self):
        assert parse_config({"lambdas": 5}).lambdas == [5.0]

    def test_explicit_seeds(self):
        config = parse_config({"seeds": [11, 4, 9]})
        assert config.seed_list() == [11, 4, 9]

    def test_custom_mixture(self):
        config = parse_config({"dataset": {"name": "custom", "centers": [[0, 0], [3, 0]], "std": 0.1}})
        mixture = config.dataset.mixture()
        assert mixture.n_modes == 2 and mixture.std == 0.1


class TestConfigErrors:
    def test_single_sample_batch(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"train": {"m": 1}})
        assert field_names(info) == {"train.m"}

    def test_unknown_fields_listed(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"trian": {}, "train": {"lamda": 1.0}, "dataset": {"nmae": "ring8"}})
        assert field_names(info) == {"trian", "train.lamda", "dataset.nmae"}

    def test_all_problems_reported_together(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"train": {"m": 1, "objective": "hinge", "model": {"g_width": 0}},
                          "metrics": {"mse_threshold": -1.0}, "workers": 0})
        names = field_names(info)
        assert {"train.m", "train.objective", "train.model.g_width",
                "metrics.mse_threshold", "workers"} <= names

    def test_wrong_types(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"train": {"m": "many", "record_wallclock": "yes"}, "seeds": [1, "two"]})
        assert field_names(info) == {"train.m", "train.record_wallclock", "seeds"}

    def test_negative_lambda(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"lambdas": [0, -1]})
        assert field_names(info) == {"lambdas"}

    def test_custom_mixture_needs_centers_and_std(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"dataset": {"name": "custom"}})
        assert field_names(info) == {"dataset.centers", "dataset.std"}

    def test_non_mapping(self):
        with pytest.raises(ConfigError):
            parse_config([1, 2, 3])


class TestFiles:
    @pytest.mark.parametrize("name", ["ring8.yaml", "grid25.yaml", "grid25_wgan_gp.yaml", "smoke.yaml"])
    def test_shipped_configs_load(self, name):
        assert isinstance(load_config(CONFIG_DIR / name), ExperimentConfig)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.yaml")

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("train: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_snapshot_round_trip(self, tiny_experiment, tmp_path):
        path = dump_config(tiny_experiment, tmp_path / "config.json")
        data = json.loads(path.read_text())
        assert list(data) == sorted(data)
        assert data["train"]["k"] == 1
        assert data["seeds"] == [3, 4, 5]
        assert load_config(path).to_dict() == tiny_experiment.to_dict()
