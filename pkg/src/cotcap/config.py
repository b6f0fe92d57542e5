"""Run configuration: one TOML file with [backends], [templates], [metrics] and [pipeline]."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .backends import BackendConfig, Gateway
from .backends.types import canonical_digest
from .metrics import MetricConfig
from .prompts import PromptTemplate, load_templates

CACHE_ENV = "COTCAP_CACHE_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    vlm: str = ""
    llm: str = ""
    limit: int = 8
    strategy: str = "single_stage"
    grounding: str = "video"
    cache_dir: str = ""
    use_cache: bool = True
    attempts: int = 3
    backoff: float = 1.0


@dataclass
class Config:
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    templates: dict[str, PromptTemplate] = field(default_factory=dict)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    raw: dict[str, Any] = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return canonical_digest(self.raw)

    def cache_dir(self, fallback: str | Path | None = None) -> Path | None:
        env = os.environ.get(CACHE_ENV)
        if env:
            return Path(env)
        if self.pipeline.cache_dir:
            return Path(self.pipeline.cache_dir)
        return Path(fallback) if fallback is not None else None

    def gateway(self, fallback_cache: str | Path | None = None, *, use_cache: bool | None = None) -> Gateway:
        use = self.pipeline.use_cache if use_cache is None else use_cache
        return Gateway(
            self.backends.values(),
            cache_dir=self.cache_dir(fallback_cache),
            use_cache=use,
            attempts=self.pipeline.attempts,
            backoff=self.pipeline.backoff,
        )


def parse_config(raw: dict[str, Any]) -> Config:
    unknown = set(raw) - {"backends", "templates", "metrics", "pipeline"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        backends = {name: BackendConfig.from_table(name, dict(t)) for name, t in raw.get("backends", {}).items()}
        templates = load_templates(overrides=raw.get("templates", {}))
        metrics = MetricConfig.from_table(dict(raw.get("metrics", {})))
        known = set(PipelineConfig.__dataclass_fields__)
        pipe_raw = raw.get("pipeline", {})
        bad = set(pipe_raw) - known
        if bad:
            raise ConfigError(f"unknown [pipeline] keys: {sorted(bad)}")
        pipeline = PipelineConfig(**pipe_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if pipeline.limit < 1:
        raise ConfigError("pipeline.limit must be >= 1")
    return Config(backends, templates, metrics, pipeline, raw)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return parse_config({})
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw)
