"""Generator and embedder interfaces, an OpenAI-compatible client, and test doubles."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Protocol, Sequence, Union

import httpx
import numpy as np

from .core import Embedding
from .errors import InvalidInputError, ProviderError, WindowExceededError

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_TOKENS = 3900
DEFAULT_MAX_OUTPUT_TOKENS = 1024
DEFAULT_BATCH_SIZE = 64
DEFAULT_CONCURRENCY = 8
API_KEY_ENV = "HYQE_API_KEY"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def estimate_tokens(text: str, chars_per_token: float = 4.0) -> int:
    """Conservative token estimate for window checks.

    Takes the larger of the word/punctuation count and the character count
    divided by ``chars_per_token``. Monotone in prefix length, which the
    chunker relies on.
    """
    if not text:
        return 0
    by_pieces = len(_TOKEN_RE.findall(text))
    by_chars = math.ceil(len(text) / chars_per_token)
    return max(by_pieces, by_chars)


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.1
    # Slot for top_p / top_k. OpenAI chat endpoints only accept top_p, so a
    # float is sent as top_p and an int as top_k.
    top_p_or_k: Optional[Union[float, int]] = None
    n_samples: int = 1
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS

    def __post_init__(self):
        if self.temperature < 0:
            raise InvalidInputError("temperature must be >= 0")
        if self.n_samples < 1:
            raise InvalidInputError("n_samples must be >= 1")
        if self.max_output_tokens < 1:
            raise InvalidInputError("max_output_tokens must be >= 1")

    def digest(self) -> str:
        fields = {"temperature": self.temperature, "top_p_or_k": self.top_p_or_k,
                  "n_samples": self.n_samples, "max_output_tokens": self.max_output_tokens}
        payload = json.dumps(fields, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True, order=True)
class GeneratorFingerprint:
    model_name: str
    prompt_template_id: str
    params_digest: str
    wrapper_id: str

    def to_dict(self) -> dict:
        return {"model_name": self.model_name, "prompt_template_id": self.prompt_template_id,
                "params_digest": self.params_digest, "wrapper_id": self.wrapper_id}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorFingerprint":
        return cls(
            model_name=d["model_name"],
            prompt_template_id=d["prompt_template_id"],
            params_digest=d["params_digest"],
            wrapper_id=d["wrapper_id"],
        )


_RULES = """You are an AI assistant. Here are some rules you always follow:
- Generate human readable output, avoid creating output with gibberish text.
- Don't plainly replicate the given instruction.
- Generate only the requested output, don't include any other language before or after the requested output.
- Never say thank you, that you are happy to help, that you are an AI agent, etc. Just answer directly.
- Generate professional language typically used in business documents in North America.
- Never generate offensive or foul language."""


@dataclass(frozen=True)
class PromptWrapper:
    """How a bare prompt is turned into a chat message sequence."""

    wrapper_id: str
    system_text: str = ""
    user_wrap: str = "{prompt}"

    def __post_init__(self):
        if self.user_wrap.count("{prompt}") != 1:
            raise InvalidInputError("user_wrap must contain exactly one {prompt} placeholder")

    def render(self, prompt: str) -> list[dict]:
        messages = []
        if self.system_text:
            messages.append({"role": "system", "content": self.system_text})
        messages.append({"role": "user", "content": self.user_wrap.replace("{prompt}", prompt)})
        return messages

    def overhead_tokens(self, chars_per_token: float = 4.0) -> int:
        bare = self.user_wrap.replace("{prompt}", "")
        return estimate_tokens(self.system_text, chars_per_token) + estimate_tokens(bare, chars_per_token)


PLAIN_WRAPPER = PromptWrapper("plain")
# System message + user prompt, as sent to the OpenAI chat API.
OPENAI_SYSTEM_WRAPPER = PromptWrapper("openai-system", system_text=_RULES)
# Single-string instruction format for Mistral-7b-instruct.
MISTRAL_INST_WRAPPER = PromptWrapper(
    "mistral-inst",
    user_wrap="<s>[INST]\n" + _RULES + "\n\nThe user prompt is as follows:\n\n{prompt}[/INST]</s>",
)

WRAPPERS = {w.wrapper_id: w for w in (PLAIN_WRAPPER, OPENAI_SYSTEM_WRAPPER, MISTRAL_INST_WRAPPER)}


def get_wrapper(wrapper_id: str) -> PromptWrapper:
    try:
        return WRAPPERS[wrapper_id]
    except KeyError:
        raise InvalidInputError(f"unknown prompt wrapper {wrapper_id!r}; known: {sorted(WRAPPERS)}") from None


class Generator(Protocol):
    model_name: str

    def generate(self, prompt: str, params: GenerationParams, wrapper: PromptWrapper) -> str: ...

    def context_window_tokens(self) -> int: ...


class Embedder(Protocol):
    name: str

    def embed(self, texts: Sequence[str]) -> list[Embedding]: ...


def check_window(prompt: str, params: GenerationParams, wrapper: PromptWrapper, window: int,
                 chars_per_token: float = 4.0) -> None:
    if not prompt:
        raise InvalidInputError("prompt must be non-empty")
    needed = (estimate_tokens(prompt, chars_per_token) + wrapper.overhead_tokens(chars_per_token)
              + params.max_output_tokens)
    if needed > window:
        raise WindowExceededError(needed, window)


def _check_texts(texts: Sequence[str]) -> None:
    for i, t in enumerate(texts):
        if not t or not t.strip():
            raise InvalidInputError(f"text #{i} is empty")


# --------------------------------------------------------------------------
# OpenAI-compatible HTTP client
# --------------------------------------------------------------------------

@dataclass
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 0.5
    max_delay: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * (2 ** attempt))


def _with_retries(fn: Callable[[], object], policy: RetryPolicy, what: str):
    attempt = 0
    while True:
        try:
            return fn()
        except ProviderError as exc:
            if not exc.retryable or attempt >= policy.max_retries:
                raise
            wait = policy.delay(attempt)
            logger.warning("%s failed (%s); retry %d/%d in %.2fs", what, exc, attempt + 1,
                           policy.max_retries, wait)
            time.sleep(wait)
            attempt += 1


class OpenAICompatibleClient:
    """Thin JSON client for ``/chat/completions`` and ``/embeddings``.

    The API key is read from ``HYQE_API_KEY`` (then ``OPENAI_API_KEY``)
    unless given explicitly. ``transport`` lets tests replay recorded
    responses through ``httpx.MockTransport``.
    """

    def __init__(self, base_url: str, api_key: str | None = None, *, timeout: float = 60.0,
                 retry: RetryPolicy | None = None, concurrency: int = DEFAULT_CONCURRENCY,
                 transport: httpx.BaseTransport | None = None):
        key = api_key or os.environ.get(API_KEY_ENV) or os.environ.get("OPENAI_API_KEY")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(base_url=base_url.rstrip("/") + "/", headers=headers,
                                  timeout=timeout, transport=transport)
        self.retry = retry or RetryPolicy()
        self._slots = threading.BoundedSemaphore(concurrency)

    def post(self, path: str, body: dict) -> dict:
        def once():
            with self._slots:
                try:
                    resp = self._http.post(path, json=body)
                except httpx.TransportError as exc:
                    raise ProviderError(f"transport error: {exc}", retryable=True) from exc
            if resp.status_code == 429 or resp.status_code >= 500:
                raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=True)
            if resp.status_code >= 400:
                raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProviderError("response body is not JSON") from exc

        return _with_retries(once, self.retry, f"POST {path}")

    def close(self) -> None:
        self._http.close()


class OpenAIChatGenerator:
    def __init__(self, client: OpenAICompatibleClient, model_name: str, *,
                 window_tokens: int = DEFAULT_WINDOW_TOKENS, chars_per_token: float = 4.0):
        self.client = client
        self.model_name = model_name
        self.window_tokens = window_tokens
        self.chars_per_token = chars_per_token

    def context_window_tokens(self) -> int:
        return self.window_tokens

    def request_body(self, prompt: str, params: GenerationParams, wrapper: PromptWrapper) -> dict:
        body = {
            "model": self.model_name,
            "messages": wrapper.render(prompt),
            "temperature": params.temperature,
            "n": params.n_samples,
            "max_tokens": params.max_output_tokens,
        }
        if isinstance(params.top_p_or_k, float):
            body["top_p"] = params.top_p_or_k
        elif isinstance(params.top_p_or_k, int):
            body["top_k"] = params.top_p_or_k
        return body

    def generate(self, prompt: str, params: GenerationParams, wrapper: PromptWrapper) -> str:
        check_window(prompt, params, wrapper, self.window_tokens, self.chars_per_token)
        data = self.client.post("chat/completions", self.request_body(prompt, params, wrapper))
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected completion body: {str(data)[:200]}") from exc


class OpenAIEmbedder:
    def __init__(self, client: OpenAICompatibleClient, model_name: str, *,
                 batch_size: int = DEFAULT_BATCH_SIZE):
        self.client = client
        self.name = model_name
        self.batch_size = batch_size

    def embed(self, texts: Sequence[str]) -> list[Embedding]:
        _check_texts(texts)
        out: list[Embedding] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start:start + self.batch_size])
            data = self.client.post("embeddings", {"model": self.name, "input": batch})
            try:
                items = sorted(data["data"], key=lambda d: d.get("index", 0))
                vecs = [Embedding(item["embedding"]) for item in items]
            except (KeyError, TypeError) as exc:
                raise ProviderError(f"unexpected embeddings body: {str(data)[:200]}") from exc
            if len(vecs) != len(batch):
                raise ProviderError(f"asked for {len(batch)} embeddings, got {len(vecs)}")
            out.extend(vecs)
        if out and len({e.dim for e in out}) != 1:
            raise ProviderError("provider returned embeddings of mixed dimension")
        return out


# --------------------------------------------------------------------------
# Deterministic doubles
# --------------------------------------------------------------------------

_PASSAGE_RE = re.compile(r"<passage>\n(.*)\n</passage>", re.DOTALL)


def extract_passage(prompt: str) -> str | None:
    """Pull the context text back out of a rendered generation prompt."""
    m = _PASSAGE_RE.search(prompt)
    return m.group(1) if m else None


class ScriptedGenerator:
    """Replays canned completions.

    Lookup order: exact prompt in ``by_prompt``, then the passage text in
    ``by_passage``, then ``fallback(prompt)`` if given, else ``default``.
    Every call is counted in ``calls``.
    """

    def __init__(self, by_prompt: Mapping[str, str] | None = None, *,
                 by_passage: Mapping[str, str] | None = None,
                 fallback: Callable[[str], str] | None = None,
                 default: str = "No Content", model_name: str = "scripted",
                 window_tokens: int = DEFAULT_WINDOW_TOKENS, chars_per_token: float = 4.0,
                 fail_on: Callable[[str], bool] | None = None):
        self.by_prompt = dict(by_prompt or {})
        self.by_passage = dict(by_passage or {})
        self.fallback = fallback
        self.default = default
        self.model_name = model_name
        self.window_tokens = window_tokens
        self.chars_per_token = chars_per_token
        self.fail_on = fail_on
        self.prompts: list[str] = []
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return len(self.prompts)

    def context_window_tokens(self) -> int:
        return self.window_tokens

    def generate(self, prompt: str, params: GenerationParams, wrapper: PromptWrapper) -> str:
        check_window(prompt, params, wrapper, self.window_tokens, self.chars_per_token)
        with self._lock:
            self.prompts.append(prompt)
        if self.fail_on is not None and self.fail_on(prompt):
            raise ProviderError("scripted failure")
        if prompt in self.by_prompt:
            return self.by_prompt[prompt]
        passage = extract_passage(prompt)
        if passage is not None and passage in self.by_passage:
            return self.by_passage[passage]
        if self.fallback is not None:
            return self.fallback(prompt)
        return self.default


class HashEmbedder:
    """Pure function from text to a raw (unnormalized) Gaussian vector.

    The text and seed are hashed with SHA-256 and the digest seeds a PCG64
    stream, so output is identical across runs, processes and platforms.
    """

    def __init__(self, dim: int = 8, seed: int = 0, name: str | None = None):
        if dim < 1:
            raise InvalidInputError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self.name = name or f"hash-{dim}-{seed}"

    def vector(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))
        return rng.standard_normal(self.dim)

    def embed(self, texts: Sequence[str]) -> list[Embedding]:
        _check_texts(texts)
        return [Embedding(self.vector(t)) for t in texts]


class TableEmbedder:
    """Looks vectors up in a fixed table; unknown texts go to ``fallback``."""

    def __init__(self, table: Mapping[str, Sequence[float]], fallback: Embedder | None = None,
                 name: str = "table"):
        self.table = {k: Embedding(v) for k, v in table.items()}
        self.fallback = fallback
        self.name = name

    def embed(self, texts: Sequence[str]) -> list[Embedding]:
        _check_texts(texts)
        out = []
        for t in texts:
            if t in self.table:
                out.append(self.table[t])
            elif self.fallback is not None:
                out.extend(self.fallback.embed([t]))
            else:
                raise InvalidInputError(f"no table entry for text {t[:40]!r}")
        return out


@dataclass
class CallCounter:
    calls: int = 0
    items: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, items: int = 1) -> None:
        with self.lock:
            self.calls += 1
            self.items += items


class CountingGenerator:
    """Wraps a generator and counts invocations."""

    def __init__(self, inner: Generator):
        self.inner = inner
        self.counter = CallCounter()

    @property
    def model_name(self) -> str:
        return self.inner.model_name

    @property
    def calls(self) -> int:
        return self.counter.calls

    def context_window_tokens(self) -> int:
        return self.inner.context_window_tokens()

    def generate(self, prompt: str, params: GenerationParams, wrapper: PromptWrapper) -> str:
        self.counter.add()
        return self.inner.generate(prompt, params, wrapper)


class CountingEmbedder:
    def __init__(self, inner: Embedder):
        self.inner = inner
        self.counter = CallCounter()

    @property
    def name(self) -> str:
        return self.inner.name

    @property
    def calls(self) -> int:
        return self.counter.calls

    @property
    def texts(self) -> int:
        return self.counter.items

    def embed(self, texts: Sequence[str]) -> list[Embedding]:
        self.counter.add(len(texts))
        return self.inner.embed(texts)
