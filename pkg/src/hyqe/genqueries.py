"""Hypothetical-query generation: prompt building, chunking and response parsing."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .core import ContextDoc, Embedding
from .errors import InvalidInputError
from .providers import (
    GenerationParams,
    Generator,
    GeneratorFingerprint,
    PromptWrapper,
    estimate_tokens,
)

logger = logging.getLogger(__name__)

CONTEXT_PLACEHOLDER = "{context}"

# Lines are joined explicitly: several carry a trailing space that must survive.
_DEFAULT_BODY = "\n".join([
    "Which kinds of questions can be answered ",
    "based on the following passage",
    "",
    "```<passage>",
    "{context}",
    "</passage>'''",
    "",
    "Questions must be very short, different, ",
    "and be written on separate lines.",
    "If the passage provides no meaningful ",
    "content, respond with a 'No Content'.",
])

_ARGUMENT_BODY = "\n".join([
    "Which topics could the 'Content' section of the following passage be arguing about.",
    "If the 'Content' section provides no meaningful argument, respond with a single 'No content'.",
    "",
    "```<passage>",
    "{context}",
    "</passage>``` ",
    "",
    "Topics are questions.",
    "Each question must be very short, different, and be written on separate lines.",
    "Do not mention the passage itself or the author of the passage...",
])


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str

    def __post_init__(self):
        if self.body.count(CONTEXT_PLACEHOLDER) != 1:
            raise InvalidInputError(
                f"template {self.template_id!r} must contain exactly one {CONTEXT_PLACEHOLDER}")

    @classmethod
    def from_file(cls, path: str | Path, template_id: str | None = None) -> "PromptTemplate":
        path = Path(path)
        return cls(template_id or path.stem, path.read_text(encoding="utf-8"))


BUILTIN_TEMPLATES = {
    "default": PromptTemplate("default", _DEFAULT_BODY),
    "argument": PromptTemplate("argument", _ARGUMENT_BODY),
}


def get_template(template_id: str, search_dir: str | Path | None = None) -> PromptTemplate:
    """Resolve a template id to a built-in or to ``<search_dir>/<id>.txt``."""
    if template_id in BUILTIN_TEMPLATES:
        return BUILTIN_TEMPLATES[template_id]
    if search_dir is not None:
        candidate = Path(search_dir) / f"{template_id}.txt"
        if candidate.is_file():
            return PromptTemplate.from_file(candidate, template_id)
    raise InvalidInputError(f"unknown prompt template {template_id!r}")


def context_text(context: ContextDoc) -> str:
    if context.title:
        return f"{context.title}\n{context.text}"
    return context.text


def build_prompt(context: ContextDoc, template: PromptTemplate) -> str:
    # str.replace, not str.format: passages contain braces and backticks.
    return template.body.replace(CONTEXT_PLACEHOLDER, context_text(context))


# A marker must be followed by whitespace so "3.5 million" keeps its number.
_MARKER_RE = re.compile(r"^(?:\d+[.)]|[-*•‣◦⁃∙])(?:\s+|$)")
_NO_CONTENT_STRIP = " \t\"'`.!,;:()[]"


def _is_no_content(line: str) -> bool:
    return line.strip(_NO_CONTENT_STRIP).lower() == "no content"


def parse_queries(raw: str) -> list[str]:
    """Split a completion into distinct queries.

    One query per line. Surrounding whitespace and leading list markers
    (``1.``, ``2)``, ``-``, ``*``, bullets) are removed and blank
    lines dropped. If any line reads "No Content" (any case, optionally
    quoted or punctuated) the whole response counts as empty. Exact
    duplicates are dropped, keeping first occurrences.
    """
    seen: dict[str, None] = {}
    for line in raw.splitlines():
        line = line.strip()
        while (m := _MARKER_RE.match(line)) is not None:
            line = line[m.end():].strip()
        if not line:
            continue
        if _is_no_content(line):
            return []
        seen.setdefault(line, None)
    return list(seen)


_SENTENCE_END_RE = re.compile(r"[.!?]+[\"')\]]*\s+")


def _split_sentences(text: str) -> list[str]:
    pieces, start = [], 0
    for m in _SENTENCE_END_RE.finditer(text):
        pieces.append(text[start:m.end()])
        start = m.end()
    if start < len(text):
        pieces.append(text[start:])
    return pieces


def _longest_fitting_prefix(text: str, limit: int, cpt: float) -> int:
    lo, hi = 1, len(text)
    # Estimates are monotone in prefix length, so bisect.
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if estimate_tokens(text[:mid], cpt) <= limit:
            lo = mid
        else:
            hi = mid - 1
    cut = lo
    ws = max(text.rfind(" ", 0, cut), text.rfind("\n", 0, cut))
    if ws > 0 and cut < len(text):
        cut = ws + 1
    return cut


def chunk_context(text: str, budget_tokens: int, prompt_overhead_tokens: int, *,
                  reserve_tokens: int = 0, chars_per_token: float = 4.0) -> list[str]:
    """Partition ``text`` so each piece fits the generation window.

    Each chunk's estimate is at most ``budget_tokens - prompt_overhead_tokens
    - reserve_tokens``. Splits fall on sentence ends when possible, then on
    whitespace, then anywhere. ``"".join(chunks) == text`` always holds.
    """
    limit = budget_tokens - prompt_overhead_tokens - reserve_tokens
    if limit < 1:
        raise InvalidInputError(
            f"no room for context: budget {budget_tokens}, overhead {prompt_overhead_tokens}, "
            f"reserve {reserve_tokens}")
    if estimate_tokens(text, chars_per_token) <= limit:
        return [text]

    chunks: list[str] = []
    current = ""
    for piece in _split_sentences(text):
        if estimate_tokens(current + piece, chars_per_token) <= limit:
            current += piece
            continue
        if current:
            chunks.append(current)
            current = ""
        while estimate_tokens(piece, chars_per_token) > limit:
            cut = _longest_fitting_prefix(piece, limit, chars_per_token)
            chunks.append(piece[:cut])
            piece = piece[cut:]
        current = piece
    if current:
        chunks.append(current)
    return chunks


@dataclass
class HypotheticalQuerySet:
    context_id: str
    fingerprint: GeneratorFingerprint
    queries: list[str] = field(default_factory=list)
    embeddings: Optional[list[Embedding]] = None

    def __post_init__(self):
        if len(set(self.queries)) != len(self.queries):
            raise InvalidInputError(f"duplicate hypothetical queries for {self.context_id!r}")
        if self.embeddings is not None:
            if len(self.embeddings) != len(self.queries):
                raise InvalidInputError("embeddings must align 1:1 with queries")
            if len({e.dim for e in self.embeddings}) > 1:
                raise InvalidInputError("hypothetical-query embeddings differ in dimension")

    def __len__(self) -> int:
        return len(self.queries)


def make_fingerprint(generator: Generator, template: PromptTemplate, params: GenerationParams,
                     wrapper: PromptWrapper) -> GeneratorFingerprint:
    return GeneratorFingerprint(
        model_name=generator.model_name,
        prompt_template_id=template.template_id,
        params_digest=params.digest(),
        wrapper_id=wrapper.wrapper_id,
    )


def prompt_overhead_tokens(template: PromptTemplate, wrapper: PromptWrapper,
                           chars_per_token: float = 4.0) -> int:
    bare = template.body.replace(CONTEXT_PLACEHOLDER, "")
    return estimate_tokens(bare, chars_per_token) + wrapper.overhead_tokens(chars_per_token) + 1


def generate_for_context(context: ContextDoc, template: PromptTemplate, generator: Generator,
                         params: GenerationParams, wrapper: PromptWrapper, *,
                         chars_per_token: float = 4.0) -> HypotheticalQuerySet:
    """Generate H(c) for one context; embeddings are left unset."""
    fingerprint = make_fingerprint(generator, template, params, wrapper)
    text = context_text(context)
    if not text.strip():
        return HypotheticalQuerySet(context.id, fingerprint, [])

    overhead = prompt_overhead_tokens(template, wrapper, chars_per_token)
    chunks = chunk_context(text, generator.context_window_tokens(), overhead,
                           reserve_tokens=params.max_output_tokens,
                           chars_per_token=chars_per_token)
    if len(chunks) > 1:
        logger.debug("context %s split into %d chunks", context.id, len(chunks))

    collected: dict[str, None] = {}
    for chunk in chunks:
        if not chunk.strip():
            continue
        prompt = build_prompt(ContextDoc(context.id, chunk), template)
        for q in parse_queries(generator.generate(prompt, params, wrapper)):
            collected.setdefault(q, None)
    return HypotheticalQuerySet(context.id, fingerprint, list(collected))


def join_lines(queries: Sequence[str]) -> str:
    return "\n".join(queries)
