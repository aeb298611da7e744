import json
import logging
from pathlib import Path
from typing import Any

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from t2s.errors import ConfigError

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-wide settings read from the environment (and an optional `.env`)."""

    model_config = SettingsConfigDict(env_prefix="T2S_", env_file=".env", extra="ignore")

    log_level: str | None = None

    embed_api_key: str = ""
    embed_endpoint: str = "https://api.openai.com/v1/embeddings"
    embed_model: str = "text-embedding-3-small"

    llm_api_key: str = ""
    llm_provider: str = "openai"
    llm_model: str = "gpt-4o-mini"
    llm_api_base: str = ""

    cache_dir: Path = Path(".t2s_cache")
    runs_dir: Path = Path("runs")
    d_text: int = Field(64, ge=8)


def get_settings() -> Settings:
    return Settings()


def load_config_file(path: str | Path | None) -> dict[str, Any]:
    """Read a flat JSON config file; nested objects are rejected."""
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    nested = [key for key, value in data.items() if isinstance(value, dict)]
    if nested:
        raise ConfigError(f"Config file {path} must be flat; nested keys: {nested}")
    return {key.replace("-", "_"): value for key, value in data.items()}


def merge_config(file_values: dict[str, Any], flag_values: dict[str, Any]) -> dict[str, Any]:
    """Flags win over file values; flags left at None do not override."""
    merged = dict(file_values)
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    return merged
