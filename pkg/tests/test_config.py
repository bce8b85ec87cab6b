"""Tests for layered run configuration."""

import pytest

from smoothgev.config import RunConfig, env_layer, file_layer, resolve_config
from smoothgev.errors import SpecError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("MODEL=mod4\nDRAWS=500\nSEED=7\nGRID_SEARCH=true\n")
    return path


class TestLayers:
    """Flag > file > environment > default precedence."""

    def test_defaults(self) -> None:
        """Nothing set gives the dataclass defaults."""
        cfg = resolve_config({}, None, environ={})
        assert cfg == RunConfig()
        assert cfg.model_list() == ["mod1", "mod2", "mod3", "mod4", "mod5"]

    def test_environment(self) -> None:
        """Prefixed environment variables are picked up and coerced."""
        cfg = resolve_config({}, None, environ={"SMOOTHGEV_DRAWS": "300", "SMOOTHGEV_P": "0.05", "HOME": "/x"})
        assert cfg.draws == 300
        assert cfg.p == 0.05

    def test_file_beats_environment(self, config_file) -> None:
        """A config file overrides the environment."""
        cfg = resolve_config({}, config_file, environ={"SMOOTHGEV_DRAWS": "300", "SMOOTHGEV_THREADS": "4"})
        assert cfg.draws == 500
        assert cfg.threads == 4
        assert cfg.grid_search is True

    def test_flags_beat_file(self, config_file) -> None:
        """Given flags win and None flags are ignored."""
        cfg = resolve_config({"model": "mod1", "seed": None, "draws": 1000}, config_file, environ={})
        assert cfg.model == "mod1"
        assert cfg.seed == 7
        assert cfg.draws == 1000

    def test_optional_none(self) -> None:
        """Optional keys accept an explicit none."""
        assert env_layer({"SMOOTHGEV_REGION": "none"}) == {"region": None}
        assert env_layer({"SMOOTHGEV_YEAR_FROM": "1979"}) == {"year_from": 1979}


class TestValidation:
    """Bad values are configuration errors."""

    def test_unknown_file_key(self, tmp_path) -> None:
        """Config files are strict about keys."""
        path = tmp_path / "bad.env"
        path.write_text("DRAWZ=10\n")
        with pytest.raises(SpecError, match="unknown config file key"):
            file_layer(path)

    def test_unknown_environment_key_ignored(self) -> None:
        """Unrelated prefixed variables are skipped."""
        assert env_layer({"SMOOTHGEV_UNUSED": "1"}) == {}

    def test_invalid_value(self) -> None:
        """Values that do not parse are reported with their key."""
        with pytest.raises(SpecError, match="draws"):
            resolve_config({}, None, environ={"SMOOTHGEV_DRAWS": "many"})
        with pytest.raises(SpecError, match="quiet"):
            resolve_config({}, None, environ={"SMOOTHGEV_QUIET": "maybe"})

    @pytest.mark.parametrize(
        "flags, message",
        [
            ({"p": 1.5}, "p must lie"),
            ({"level": 0.0}, "level must lie"),
            ({"folds": 1}, "folds must be at least 2"),
            ({"threads": 0}, "must be positive"),
            ({"bonferroni_regions": 0}, "bonferroni_regions must be at least 1"),
            ({"model": "mod7"}, "unknown model"),
            ({"models": "mod1,modX"}, "unknown model"),
        ],
    )
    def test_ranges(self, flags, message) -> None:
        """Out-of-range settings are rejected."""
        with pytest.raises(SpecError, match=message):
            resolve_config(flags, None, environ={})

    def test_missing_file(self, tmp_path) -> None:
        """A named config file must exist."""
        with pytest.raises(FileNotFoundError):
            resolve_config({}, tmp_path / "absent.env", environ={})

    def test_lists(self) -> None:
        """Comma lists are split, trimmed and lower-cased."""
        cfg = RunConfig(models=" Mod1, mod5 ,", score_columns="CRP, se")
        assert cfg.model_list() == ["mod1", "mod5"]
        assert cfg.score_list() == ["crp", "se"]
