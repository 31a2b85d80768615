import pytest

from ntg import config
from ntg.errors import ConfigError, UsageError
from ntg.trainer import TrainConfig


class TestConfigFile:
    def test_overlay(self):
        text = "# schedule\nepochs = 5\nlr0 = 1e-3  # faster\nnormalize_input = yes\nmode = full\n"
        result = config.parse_config_text(text, TrainConfig())
        assert (result.epochs, result.lr0, result.normalize_input, result.mode) == (5, 1e-3, True, "full")
        assert result.batch_size == 1

    @pytest.mark.parametrize(
        "text",
        ["epochz = 3", "epochs 3", "epochs = three", "normalize_input = maybe", "epochs = 1\nepochs = 2"],
    )
    def test_rejected_lines(self, text):
        with pytest.raises(ConfigError):
            config.parse_config_text(text, TrainConfig())

    def test_invalid_value_fails_validation(self):
        with pytest.raises(UsageError):
            config.parse_config_text("mode = turbo", TrainConfig())

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            config.load_config_file(tmp_path / "absent.cfg", TrainConfig())

    def test_non_utf8_file(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_bytes(b"epochs = \xff\n")
        with pytest.raises(ConfigError):
            config.load_config_file(path, TrainConfig())


class TestThreads:
    def test_flag_wins(self, monkeypatch):
        monkeypatch.setattr(config, "NTG_THREADS", "3")
        assert config.resolve_threads(5) == 5

    def test_environment_used_without_flag(self, monkeypatch):
        monkeypatch.setattr(config, "NTG_THREADS", "3")
        assert config.resolve_threads() == 3

    def test_bad_environment(self, monkeypatch):
        monkeypatch.setattr(config, "NTG_THREADS", "many")
        with pytest.raises(UsageError):
            config.resolve_threads()

    def test_defaults_to_cores(self, monkeypatch):
        monkeypatch.setattr(config, "NTG_THREADS", "")
        assert config.resolve_threads() >= 1

    def test_set_threads_floors_at_one(self):
        config.set_threads(0)
        assert config.get_threads() == 1
