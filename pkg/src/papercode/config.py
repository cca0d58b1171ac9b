"""Pipeline configuration: TOML file, CLI overrides, defaults."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .llm import DEFAULT_MAX_TOKENS, OpenAICompatibleProvider, Provider
from .retrieval import (
    DOCUMENT_INSTRUCTION,
    QUERY_INSTRUCTION,
    EmbeddingProvider,
    HashEmbeddingProvider,
    SentenceTransformerProvider,
)
from .rrag import DEFAULT_CONTEXT_BUDGET, DEFAULT_K, DEFAULT_MAX_QUERIES
from .tsed import DEFAULT_WEIGHTS, EditWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str
    api_key_env: str
    timeout: float = 120.0


@dataclass(frozen=True)
class PipelineConfig:
    analyst_model: str = "llama3-70b-instruct"
    coder_model: str = "gpt-4o"
    providers: Mapping[str, ProviderConfig] = field(default_factory=dict)
    max_tokens: int = DEFAULT_MAX_TOKENS
    max_in_flight: int = 4
    embedding_provider: str = "hash"
    embedding_model: str = ""
    embedding_dimension: int = 256
    document_instruction: str = DOCUMENT_INSTRUCTION
    query_instruction: str = QUERY_INSTRUCTION
    k: int = DEFAULT_K
    max_queries: int = DEFAULT_MAX_QUERIES
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    weights: EditWeights = DEFAULT_WEIGHTS
    grammar_id: str = "python"
    rounds: int = 1
    ontology_path: Optional[str] = None

    def __post_init__(self) -> None:
        for name in ("max_tokens", "max_in_flight", "embedding_dimension", "k", "max_queries",
                     "context_budget", "rounds"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.embedding_provider not in ("hash", "sentence-transformers"):
            raise ConfigError(f"unknown embedding provider {self.embedding_provider!r}")
        if self.embedding_provider == "sentence-transformers" and not self.embedding_model:
            raise ConfigError("embedding_model is required for the sentence-transformers provider")

    @property
    def models(self) -> dict[str, str]:
        return {"analyst": self.analyst_model, "coder": self.coder_model}

    def to_dict(self) -> dict:
        data = asdict(self)
        data["weights"] = list(self.weights.as_tuple())
        data["providers"] = {k: asdict(v) for k, v in sorted(self.providers.items())}
        return data

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def live_providers(self) -> dict[str, Provider]:
        return {
            role: OpenAICompatibleProvider(p.base_url, p.api_key_env, p.timeout)
            for role, p in self.providers.items()
        }

    def embedder(self) -> EmbeddingProvider:
        if self.embedding_provider == "hash":
            return HashEmbeddingProvider(self.embedding_dimension)
        return SentenceTransformerProvider(self.embedding_model, self.embedding_dimension)


# TOML section -> {key in section: PipelineConfig field}
_SECTIONS = {
    "models": {"analyst": "analyst_model", "coder": "coder_model"},
    "llm": {"max_tokens": "max_tokens", "max_in_flight": "max_in_flight"},
    "embedding": {
        "provider": "embedding_provider",
        "model": "embedding_model",
        "dimension": "embedding_dimension",
        "document_instruction": "document_instruction",
        "query_instruction": "query_instruction",
    },
    "retrieval": {"k": "k"},
    "rrag": {"max_queries": "max_queries", "context_budget": "context_budget", "rounds": "rounds"},
    "tsed": {"weights": "weights", "grammar": "grammar_id"},
    "knowledge_graph": {"ontology": "ontology_path"},
}


def _coerce(name: str, value: Any) -> Any:
    if name == "weights":
        if isinstance(value, EditWeights):
            return value
        if isinstance(value, str):
            return EditWeights.parse(value)
        if len(value) != 3:
            raise ConfigError("weights needs three values (delete, insert, rename)")
        return EditWeights(*value)
    return value


def config_from_mapping(data: Mapping[str, Any], base: Optional[PipelineConfig] = None) -> PipelineConfig:
    values: dict[str, Any] = {}
    for section, body in data.items():
        if section == "providers":
            values["providers"] = {
                role: ProviderConfig(**spec) for role, spec in body.items()
            }
            continue
        keys = _SECTIONS.get(section)
        if keys is None:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in body.items():
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[keys[key]] = _coerce(keys[key], value)
    try:
        return replace(base or PipelineConfig(), **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Optional[str | Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """Defaults, then the TOML file, then ``overrides`` (PipelineConfig field names)."""
    config = PipelineConfig()
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        config = config_from_mapping(data, config)
        if config.ontology_path and not Path(config.ontology_path).is_absolute():
            config = replace(config, ontology_path=str(path.parent / config.ontology_path))
    if overrides:
        known = {f.name for f in fields(PipelineConfig)}
        clean = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown setting {key!r}")
            clean[key] = _coerce(key, value)
        try:
            config = replace(config, **clean)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return config
