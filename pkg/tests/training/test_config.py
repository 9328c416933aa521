import json

import pytest

from covariance_fewshot.core import ShrinkageConvention
from covariance_fewshot.errors import ConfigError
from covariance_fewshot.training import TrainConfig, load_train_config, validate_train_config
from covariance_fewshot.training.presets import dataset_preset

"""
========================================================================================================================
TrainConfig
========================================================================================================================
"""


class TestTrainConfig:
    # 4-shot defaults: 100 epochs, gamma1=600, gamma2=100
    def test_four_shot_defaults(self):
        config = TrainConfig.for_shots(4)

        assert config.epochs == 100
        assert (config.shrinkage.gamma1, config.shrinkage.gamma2) == (600.0, 100.0)
        assert config.shrinkage.convention is ShrinkageConvention.FECAM
        assert config.heads == 4

    # Shot-keyed defaults for 1 and 16 shots
    @pytest.mark.parametrize("shots,epochs,gammas", [(1, 80, (500.0, 300.0)), (16, 200, (500.0, 500.0))])
    def test_shot_defaults(self, shots, epochs, gammas):
        config = TrainConfig.for_shots(shots)

        assert config.epochs == epochs
        assert (config.shrinkage.gamma1, config.shrinkage.gamma2) == gammas

    # Violations list their dotted field paths
    def test_field_paths(self):
        with pytest.raises(ConfigError) as excinfo:
            validate_train_config({"weights": {"alpha": -1.0}, "tau": 0.0})

        paths = " ".join(excinfo.value.field_paths)
        assert "weights.alpha" in paths
        assert "tau" in paths

    # Unknown fields and unsupported shot counts are rejected
    def test_rejects_unknown_and_bad_shots(self):
        with pytest.raises(ConfigError):
            validate_train_config({"learning_rate": 0.1})
        with pytest.raises(ConfigError):
            TrainConfig.for_shots(3)

    # Warmup must fit in the epoch budget
    def test_warmup_within_budget(self):
        with pytest.raises(ConfigError):
            TrainConfig.for_shots(4, epochs=5)

    # override returns a validated copy
    def test_override(self):
        config = TrainConfig.for_shots(4)

        updated = config.override({"weights": {"beta": 0.0}, "heads": 1})

        assert updated.weights.beta == 0.0
        assert updated.weights.alpha == config.weights.alpha
        assert updated.heads == 1
        assert config.heads == 4

    # The snapshot rebuilds an equal config
    def test_snapshot(self):
        config = TrainConfig.for_shots(8, seed=3)

        assert validate_train_config(config.snapshot()) == config


"""
========================================================================================================================
load_train_config
========================================================================================================================
"""


class TestLoadTrainConfig:
    # Dataset presets set the loss weights and batch size
    def test_preset(self):
        config = load_train_config(None, {"preset": "eurosat"})

        assert (config.weights.alpha, config.weights.beta) == (100.0, 2.0)
        assert dataset_preset("ImageNet")["batch_size"] == 64

    # Presets carry their peak learning rate; explicit values still win
    def test_preset_learning_rate(self):
        assert load_train_config(None, {"preset": "flowers102"}).base_lr == 0.002
        assert load_train_config(None, {"preset": "dtd"}).base_lr == 20.0
        assert load_train_config(None, {"preset": "dtd", "base_lr": 0.5}).base_lr == 0.5
        assert dataset_preset("OXFORD_PETS")["base_lr"] == 0.02

    # Layering: shot defaults < preset < file < explicit overrides
    def test_layering(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"shots": 1, "preset": "dtd", "weights": {"beta": 0.25}, "heads": 2}))

        config = load_train_config(path, {"heads": 3})

        assert config.shots == 1
        assert config.epochs == 80
        assert config.weights.alpha == 5.0
        assert config.weights.beta == 0.25
        assert config.heads == 3

    # Overridden shots pick their own defaults
    def test_override_shots(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"shots": 1}))

        config = load_train_config(path, {"shots": 16})

        assert (config.shots, config.epochs) == (16, 200)

    # Missing files, invalid JSON and unknown presets are config errors
    def test_errors(self, tmp_path):
        broken = tmp_path / "broken.json"
        broken.write_text("{not json")

        with pytest.raises(ConfigError):
            load_train_config(tmp_path / "missing.json")
        with pytest.raises(ConfigError):
            load_train_config(broken)
        with pytest.raises(ConfigError):
            load_train_config(None, {"preset": "mnist"})

    # A shot count of the wrong type is a field-level config error
    @pytest.mark.parametrize("shots", [[4], {"k": 4}, "four"])
    def test_non_integer_shots(self, tmp_path, shots):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"shots": shots}))

        with pytest.raises(ConfigError) as excinfo:
            load_train_config(path)

        assert any(entry.startswith("shots") for entry in excinfo.value.field_paths)
