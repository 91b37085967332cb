"""Layered configuration: defaults, then config file, then env, then flags.

The config file is a flat TOML document whose keys mirror PipelineConfig
field names plus a small set of path and endpoint keys. API keys are taken
from the environment only, never from files.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .domain import PipelineConfig
from .errors import ConfigError

DEFAULT_CACHE_DIR = Path("./.novelty-cache")
DEFAULT_S2_BASE_URL = "https://api.semanticscholar.org"

_PIPELINE_FIELDS = {f.name for f in dataclasses.fields(PipelineConfig)}

_SETTINGS_KEYS = {
    "llm_base_url",
    "embed_base_url",
    "s2_base_url",
    "cache_dir",
    "examples_path",
    "mock_dir",
    "live",
    "log_level",
}

ENV_VARS = {
    "llm_api_key": "NOVELTY_LLM_API_KEY",
    "llm_base_url": "NOVELTY_LLM_BASE_URL",
    "embed_api_key": "NOVELTY_EMBED_API_KEY",
    "embed_base_url": "NOVELTY_EMBED_BASE_URL",
    "s2_api_key": "NOVELTY_S2_API_KEY",
    "s2_base_url": "NOVELTY_S2_BASE_URL",
}


@dataclass(frozen=True)
class Settings:
    """Fully resolved configuration for one invocation."""

    pipeline: PipelineConfig = PipelineConfig()
    llm_base_url: Optional[str] = None
    llm_api_key: str = ""
    embed_base_url: Optional[str] = None
    embed_api_key: str = ""
    s2_base_url: str = DEFAULT_S2_BASE_URL
    s2_api_key: str = ""
    cache_dir: Path = DEFAULT_CACHE_DIR
    mock_dir: Optional[Path] = None
    live: bool = False
    examples_path: Optional[Path] = None
    log_level: str = "INFO"

    def __post_init__(self):
        if self.mock_dir is not None and self.live:
            raise ConfigError("choose either a mock fixture directory or --live, not both")


def _read_config_file(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}")
    unknown = set(doc) - _PIPELINE_FIELDS - _SETTINGS_KEYS
    if unknown:
        raise ConfigError(
            f"unknown config keys in {path}: {', '.join(sorted(unknown))}"
        )
    return doc


def load_settings(
    config_path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping | None = None,
) -> Settings:
    """Resolve settings with precedence defaults < file < environment < flags.

    ``overrides`` holds flag values; entries that are None are treated as
    not provided.

    Raises:
        ConfigError: unreadable file, unknown keys, or invalid field values.
    """
    env = os.environ if env is None else env
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    pipeline_kwargs: dict = {}
    settings_kwargs: dict = {}
    if config_path is not None:
        config_path = Path(config_path)
        for key, value in _read_config_file(config_path).items():
            if key in _PIPELINE_FIELDS:
                pipeline_kwargs[key] = value
            else:
                if key in ("cache_dir", "examples_path", "mock_dir"):
                    # relative paths in a config file are relative to the file
                    value = str((config_path.parent / Path(value)).resolve())
                settings_kwargs[key] = value
    for field, var in ENV_VARS.items():
        if env.get(var):
            settings_kwargs[field] = env[var]
    for key, value in overrides.items():
        if key in _PIPELINE_FIELDS:
            pipeline_kwargs[key] = value
        elif key in _SETTINGS_KEYS:
            settings_kwargs[key] = value
        else:
            raise ConfigError(f"unknown setting {key!r}")
    for key in ("cache_dir", "examples_path", "mock_dir"):
        if settings_kwargs.get(key) is not None:
            settings_kwargs[key] = Path(settings_kwargs[key])
    if "live" in settings_kwargs:
        settings_kwargs["live"] = bool(settings_kwargs["live"])
    try:
        pipeline = PipelineConfig(**pipeline_kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad pipeline settings: {exc}")
    return Settings(pipeline=pipeline, **settings_kwargs)
