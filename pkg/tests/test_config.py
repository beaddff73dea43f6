"""
Tests for balltrack.config module

This test suite covers configuration loading:

- Config defaults and the per-module configs built from it
- JSON config file loading and type checking
- Argument overrides and their precedence over the file
- Logger integration
- Validation of the combined configuration
"""

import json
from types import SimpleNamespace
from unittest.mock import call, patch

import pytest

from balltrack.config import Config, load_config, load_config_file
from balltrack.errors import FormatError


@pytest.fixture
def config_file(tmp_path):
    def write(document):
        path = tmp_path / "balltrack.json"
        path.write_text(json.dumps(document), encoding="utf-8")
        return path

    return write


class TestConfig:
    """Test cases for Config class functionality."""

    def test_defaults(self):
        """Test the documented default values."""
        config = Config()
        assert config.epsilon == 5.0
        assert config.min_inliers == 2
        assert config.fusion_strategy == "vectorized"
        assert (config.t_high, config.t_low, config.connectivity) == (0.8, 0.3, 8)
        assert config.frame_rate == 200.0
        assert config.seed == 0

    def test_module_configs(self):
        """Test that per-module configs carry the settings through."""
        config = Config(epsilon=3.0, max_iterations=4, t_low=0.2, connectivity=4)
        fusion = config.fusion()
        assert fusion.epsilon == 3.0
        assert fusion.tolerances.max_iterations == 4
        detector = config.detector()
        assert detector.t_low == 0.2
        assert detector.connectivity == 4


class TestLoadConfigFile:
    """Test cases for JSON config files."""

    def test_values_are_applied(self, config_file):
        """Test that every key in the file overrides the default."""
        config = Config()
        path = config_file({"epsilon": 7, "fusion_strategy": "sequential"})
        load_config_file(config, path)
        assert config.epsilon == 7.0
        assert isinstance(config.epsilon, float)
        assert config.fusion_strategy == "sequential"

    def test_unknown_key(self, config_file):
        """Test that misspelled keys are reported, not ignored."""
        with pytest.raises(FormatError, match="unknown config keys epsilion"):
            load_config_file(Config(), config_file({"epsilion": 2.0}))

    def test_wrong_type(self, config_file):
        """Test that values must keep the declared type."""
        with pytest.raises(FormatError, match="expects int"):
            load_config_file(Config(), config_file({"min_inliers": 2.5}))
        with pytest.raises(FormatError, match="expects float"):
            load_config_file(Config(), config_file({"epsilon": True}))

    def test_not_an_object(self, config_file):
        """Test that the document must be a JSON object."""
        with pytest.raises(FormatError, match="JSON object"):
            load_config_file(Config(), config_file([1, 2]))

    def test_invalid_json(self, tmp_path):
        """Test that malformed JSON is a format error."""
        path = tmp_path / "broken.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(FormatError, match="invalid JSON"):
            load_config_file(Config(), path)


class TestLoadConfig:
    """Test cases for load_config function."""

    @patch("balltrack.config.logger")
    def test_load_config_no_args(self, mock_logger):
        """Test load_config with no arguments."""
        config = load_config()
        assert config == Config()
        mock_logger.info.assert_called_once_with("Balltrack configuration loaded")

    @patch("balltrack.config.logger")
    def test_load_config_with_args(self, mock_logger):
        """Test that set arguments override defaults and are logged."""
        args = SimpleNamespace(epsilon=8.0, seed=3, t_high=None)
        config = load_config(args)
        assert config.epsilon == 8.0
        assert config.seed == 3
        assert config.t_high == 0.8
        mock_logger.debug.assert_has_calls(
            [
                call("Setting epsilon from arguments: 8.0"),
                call("Setting seed from arguments: 3"),
            ]
        )

    @patch("balltrack.config.logger")
    def test_load_config_args_override_file(self, mock_logger, config_file):
        """Test that arguments take precedence over the config file."""
        path = config_file({"epsilon": 2.0, "min_inliers": 3})
        args = SimpleNamespace(config=str(path), epsilon=9.0)
        config = load_config(args)
        assert config.epsilon == 9.0
        assert config.min_inliers == 3
        mock_logger.info.assert_called_once_with("Balltrack configuration loaded")

    def test_load_config_args_without_attributes(self):
        """Test load_config with an args object that has none of the fields."""
        config = load_config(SimpleNamespace(command="track"))
        assert config == Config()

    @pytest.mark.parametrize(
        "overrides",
        [
            {"epsilon": -1.0},
            {"min_inliers": 1},
            {"fusion_strategy": "greedy"},
            {"t_low": 0.9},
        ],
    )
    def test_load_config_rejects_invalid_values(self, overrides):
        """Test that the combined configuration is validated."""
        with pytest.raises(FormatError, match="Invalid configuration"):
            load_config(SimpleNamespace(**overrides))
