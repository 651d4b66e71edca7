"""Settings file loading and provider construction.

Precedence is command-line flags, then the YAML/JSON config file, then
built-in defaults.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .cache import GenerationDeps, HypotheticalQueryStore
from .errors import InvalidInputError
from .genqueries import get_template
from .pipeline import PipelineConfig, RankerDeps
from .providers import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_CONCURRENCY,
    DEFAULT_MAX_OUTPUT_TOKENS,
    DEFAULT_WINDOW_TOKENS,
    CountingEmbedder,
    CountingGenerator,
    GenerationParams,
    HashEmbedder,
    OpenAIChatGenerator,
    OpenAICompatibleClient,
    OpenAIEmbedder,
    RetryPolicy,
    ScriptedGenerator,
    TableEmbedder,
    get_wrapper,
)
from .scoring import ScoreConfig, default_score_config

DEFAULTS: dict[str, Any] = {
    "embedding_model": None,
    "chars_per_token": 4.0,
    "concurrency": DEFAULT_CONCURRENCY,
    "retry": {"max_retries": 3, "base_delay": 0.5},
    "generator": {
        "kind": "openai",
        "model": "gpt-3.5-turbo",
        "base_url": "https://api.openai.com/v1",
        "window_tokens": DEFAULT_WINDOW_TOKENS,
        "wrapper": "openai-system",
        "temperature": 0.1,
        "top_p_or_k": None,
        "n_samples": 1,
        "max_output_tokens": DEFAULT_MAX_OUTPUT_TOKENS,
        "script": None,
    },
    "embedder": {
        "kind": "openai",
        "model": "text-embedding-3-large",
        "base_url": "https://api.openai.com/v1",
        "batch_size": DEFAULT_BATCH_SIZE,
        "dim": 8,
        "seed": 0,
        "table": None,
    },
    "pipeline": {
        "k": 30,
        "retrieval_depth": 100,
        "template_id": "default",
        "template_dir": None,
        "hyde": "off",
        "hyde_n_contexts": 4,
        "strict": False,
        "prerank": False,
    },
    "score": {},
}


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _resolve(base_dir: Path, p: Optional[str]) -> Optional[str]:
    if p is None:
        return None
    path = Path(p)
    return str(path if path.is_absolute() else base_dir / path)


@dataclass
class Settings:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Mapping | None = None) -> "Settings":
        data: dict = {}
        base_dir = Path.cwd()
        if path is not None:
            path = Path(path)
            text = path.read_text(encoding="utf-8")
            data = (json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)) or {}
            if not isinstance(data, dict):
                raise InvalidInputError(f"config {path} must be a mapping")
            base_dir = path.resolve().parent
        raw = _merge(DEFAULTS, data)
        if overrides:
            raw = _merge(raw, overrides)
        # YAML reads a bare `off` as False.
        if raw["pipeline"]["hyde"] is False:
            raw["pipeline"]["hyde"] = "off"
        return cls(raw, base_dir)

    def snapshot(self) -> dict:
        return copy.deepcopy(self.raw)

    # -- typed views -------------------------------------------------------

    def score_config(self) -> ScoreConfig:
        base = default_score_config(self.raw.get("embedding_model"))
        return ScoreConfig.from_dict(self.raw.get("score") or {}, base)

    def pipeline_config(self) -> PipelineConfig:
        p = self.raw["pipeline"]
        return PipelineConfig(
            k=int(p["k"]),
            retrieval_depth=int(p["retrieval_depth"]),
            score=self.score_config(),
            template_id=p["template_id"],
            hyde=p["hyde"],
            hyde_n_contexts=int(p["hyde_n_contexts"]),
            strict=bool(p["strict"]),
            prerank=bool(p["prerank"]),
        )

    def generation_params(self) -> GenerationParams:
        g = self.raw["generator"]
        return GenerationParams(
            temperature=float(g["temperature"]),
            top_p_or_k=g.get("top_p_or_k"),
            n_samples=int(g["n_samples"]),
            max_output_tokens=int(g["max_output_tokens"]),
        )

    def _client(self, section: dict) -> OpenAICompatibleClient:
        r = self.raw["retry"]
        return OpenAICompatibleClient(
            section["base_url"], section.get("api_key"),
            retry=RetryPolicy(max_retries=int(r["max_retries"]), base_delay=float(r["base_delay"])),
            concurrency=int(self.raw["concurrency"]),
        )

    def build_generator(self):
        g = self.raw["generator"]
        cpt = float(self.raw["chars_per_token"])
        if g["kind"] == "openai":
            return OpenAIChatGenerator(self._client(g), g["model"],
                                       window_tokens=int(g["window_tokens"]), chars_per_token=cpt)
        if g["kind"] == "scripted":
            script = {}
            if g.get("script"):
                script = json.loads(Path(_resolve(self.base_dir, g["script"])).read_text(encoding="utf-8"))
            return ScriptedGenerator(
                script.get("by_prompt"), by_passage=script.get("by_passage"),
                default=script.get("default", "No Content"), model_name=g.get("model") or "scripted",
                window_tokens=int(g["window_tokens"]), chars_per_token=cpt,
            )
        raise InvalidInputError(f"unknown generator kind {g['kind']!r}")

    def build_embedder(self):
        e = self.raw["embedder"]
        if e["kind"] == "openai":
            return OpenAIEmbedder(self._client(e), e["model"], batch_size=int(e["batch_size"]))
        if e["kind"] == "hash":
            return HashEmbedder(int(e["dim"]), int(e["seed"]))
        if e["kind"] == "table":
            table = json.loads(Path(_resolve(self.base_dir, e["table"])).read_text(encoding="utf-8"))
            fallback = HashEmbedder(int(e["dim"]), int(e["seed"]))
            return TableEmbedder(table, fallback, name=e.get("model") or "table")
        raise InvalidInputError(f"unknown embedder kind {e['kind']!r}")


@dataclass
class Runtime:
    """Instrumented providers plus the store, built once per command."""

    settings: Settings
    generator: CountingGenerator
    hyde_generator: CountingGenerator
    embedder: CountingEmbedder
    store: HypotheticalQueryStore
    deps: RankerDeps
    pipeline: PipelineConfig

    def provider_counts(self) -> dict:
        return {
            "generator_calls": self.generator.calls,
            "hyde_generator_calls": self.hyde_generator.calls,
            "embedder_calls": self.embedder.calls,
            "embedded_texts": self.embedder.texts,
        }


def build_runtime(settings: Settings, cache_dir: str | Path, *, generator=None, embedder=None) -> Runtime:
    """Assemble providers, store and pipeline config.

    ``generator``/``embedder`` override what the settings would build,
    which is how tests inject instrumented doubles.
    """
    base_gen = generator if generator is not None else settings.build_generator()
    gen = CountingGenerator(base_gen)
    hyde_gen = CountingGenerator(base_gen)
    emb = CountingEmbedder(embedder if embedder is not None else settings.build_embedder())
    p = settings.raw["pipeline"]
    template_dir = _resolve(settings.base_dir, p.get("template_dir"))
    template = get_template(p["template_id"], template_dir)
    wrapper = get_wrapper(settings.raw["generator"]["wrapper"])
    params = settings.generation_params()
    generation = GenerationDeps(gen, emb, template, params, wrapper,
                                chars_per_token=float(settings.raw["chars_per_token"]))
    store = HypotheticalQueryStore(cache_dir)
    deps = RankerDeps(generation, store, hyde_generator=hyde_gen, hyde_params=params,
                      hyde_wrapper=wrapper, concurrency=int(settings.raw["concurrency"]))
    return Runtime(settings, gen, hyde_gen, emb, store, deps, settings.pipeline_config())
