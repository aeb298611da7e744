import json

import pytest

from t2s.config import Settings, get_settings, load_config_file, merge_config
from t2s.errors import ConfigError


def test_settings_read_prefixed_env(monkeypatch, tmp_path):
    monkeypatch.setenv("T2S_EMBED_MODEL", "mock-embed")
    monkeypatch.setenv("T2S_D_TEXT", "32")
    settings = get_settings()
    assert settings.embed_model == "mock-embed"
    assert settings.d_text == 32
    assert settings.runs_dir == tmp_path / "runs"


def test_settings_reject_tiny_d_text(monkeypatch):
    monkeypatch.setenv("T2S_D_TEXT", "4")
    with pytest.raises(ValueError):
        Settings()


def test_load_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"batch-size": 8, "lengths": [24, 48]}))
    assert load_config_file(path) == {"batch_size": 8, "lengths": [24, 48]}
    assert load_config_file(None) == {}


@pytest.mark.parametrize("content", ["{not json", "[1, 2]", '{"a": {"b": 1}}'])
def test_bad_config_files(tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(content)
    with pytest.raises(ConfigError):
        load_config_file(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config_file(tmp_path / "absent.json")


def test_flags_override_file_values():
    merged = merge_config({"seed": 1, "steps": 10}, {"seed": 2, "steps": None, "cfg_scale": 4.0})
    assert merged == {"seed": 2, "steps": 10, "cfg_scale": 4.0}
