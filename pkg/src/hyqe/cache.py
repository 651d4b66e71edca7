"""On-disk store of hypothetical-query sets and their embeddings.

Layout::

    <store>/manifest.json              index of every record
    <store>/records/<keydigest>.json   one record per (context_id, fingerprint)

Records are written to a temporary file and renamed into place, so a
crash never leaves a half-written record behind.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from .core import ContextDoc, Embedding
from .errors import CorruptRecordError, InvalidInputError
from .genqueries import (
    HypotheticalQuerySet,
    PromptTemplate,
    generate_for_context,
    make_fingerprint,
)
from .providers import (
    PLAIN_WRAPPER,
    Embedder,
    GenerationParams,
    Generator,
    GeneratorFingerprint,
    PromptWrapper,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True, order=True)
class CacheKey:
    context_id: str
    fingerprint: GeneratorFingerprint

    def to_dict(self) -> dict:
        return {"context_id": self.context_id, "fingerprint": self.fingerprint.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CacheKey":
        return cls(d["context_id"], GeneratorFingerprint.from_dict(d["fingerprint"]))

    def digest(self) -> str:
        return _key_digest(self)


@functools.lru_cache(maxsize=4096)
def _key_digest(key: CacheKey) -> str:
    canon = json.dumps(key.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CacheRecord:
    key: CacheKey
    queries: list
    embeddings: list
    embedder_name: str
    created_at: str

    def __post_init__(self):
        if len(self.queries) != len(self.embeddings):
            raise InvalidInputError("embeddings must align 1:1 with queries")

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "key": self.key.to_dict(),
            "queries": list(self.queries),
            "embeddings": [e.tolist() for e in self.embeddings],
            "embedder_name": self.embedder_name,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CacheRecord":
        return cls(
            key=CacheKey.from_dict(d["key"]),
            queries=list(d["queries"]),
            embeddings=[Embedding(v) for v in d["embeddings"]],
            embedder_name=d["embedder_name"],
            created_at=d["created_at"],
        )

    def serialize(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False, indent=1).encode("utf-8")

    def as_query_set(self) -> HypotheticalQuerySet:
        return HypotheticalQuerySet(self.key.context_id, self.key.fingerprint,
                                    list(self.queries), list(self.embeddings))


@dataclass
class GenerationDeps:
    """Everything a cache miss needs to produce a record."""

    generator: Generator
    embedder: Embedder
    template: PromptTemplate
    params: GenerationParams = field(default_factory=GenerationParams)
    wrapper: PromptWrapper = PLAIN_WRAPPER
    chars_per_token: float = 4.0

    def fingerprint(self) -> GeneratorFingerprint:
        return make_fingerprint(self.generator, self.template, self.params, self.wrapper)

    def key_for(self, context_id: str) -> CacheKey:
        return CacheKey(context_id, self.fingerprint())


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def _index_entry(rec: CacheRecord) -> dict:
    return {"key": rec.key.to_dict(), "n_queries": len(rec.queries), "embedder_name": rec.embedder_name}


class QueryStore:
    """Lookup, single-flight generation and counters shared by every backend."""

    def __init__(self):
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        self._hits = 0
        self._misses = 0
        self._reembeds = 0
        self._clock: Callable[[], str] = _now

    def _read(self, key: CacheKey) -> Optional[CacheRecord]:
        raise NotImplementedError

    def put(self, record: CacheRecord) -> None:
        raise NotImplementedError

    def _index_values(self) -> list[dict]:
        raise NotImplementedError

    def get(self, key: CacheKey) -> Optional[CacheRecord]:
        """Return the stored record or ``None``. Does not touch the counters."""
        return self._read(key)

    def __contains__(self, key: CacheKey) -> bool:
        return self._read(key) is not None

    def _key_lock(self, digest: str) -> threading.Lock:
        with self._lock:
            return self._key_locks.setdefault(digest, threading.Lock())

    def get_or_generate(self, key: CacheKey, context: ContextDoc, deps: GenerationDeps) -> CacheRecord:
        """Return H(c) for ``context``, generating and persisting it on a miss.

        A stored record whose embeddings came from another embedder keeps
        its queries; only the embeddings are recomputed and rewritten.
        """
        if key.context_id != context.id:
            raise InvalidInputError(f"key is for {key.context_id!r} but context is {context.id!r}")

        rec = self._read(key)
        if rec is not None and rec.embedder_name == deps.embedder.name:
            self._count(hit=True)
            return rec

        with self._key_lock(key.digest()):
            rec = self._read(key)
            if rec is not None and rec.embedder_name == deps.embedder.name:
                self._count(hit=True)
                return rec
            if rec is not None:
                embeddings = deps.embedder.embed(rec.queries) if rec.queries else []
                rec = CacheRecord(key, list(rec.queries), embeddings, deps.embedder.name, rec.created_at)
                self.put(rec)
                self._count(hit=True, reembed=True)
                return rec

            hyps = generate_for_context(context, deps.template, deps.generator, deps.params,
                                        deps.wrapper, chars_per_token=deps.chars_per_token)
            if hyps.fingerprint != key.fingerprint:
                raise InvalidInputError("deps do not produce the fingerprint in the cache key")
            embeddings = deps.embedder.embed(hyps.queries) if hyps.queries else []
            rec = CacheRecord(key, hyps.queries, embeddings, deps.embedder.name, self._clock())
            self.put(rec)
            self._count(hit=False)
            return rec

    def _count(self, *, hit: bool, reembed: bool = False) -> None:
        with self._lock:
            if hit:
                self._hits += 1
            else:
                self._misses += 1
            if reembed:
                self._reembeds += 1

    def stats(self) -> dict:
        entries = self._index_values()
        with self._lock:
            return {
                "records": len(entries),
                "queries": sum(e["n_queries"] for e in entries),
                "hits": self._hits,
                "misses": self._misses,
                "reembeds": self._reembeds,
            }

    def keys(self) -> list[CacheKey]:
        return sorted(CacheKey.from_dict(e["key"]) for e in self._index_values())


class HypotheticalQueryStore(QueryStore):
    """Persistent cache keyed by :class:`CacheKey`.

    Concurrent misses on one key are single-flighted: the first caller
    generates, the rest wait and read its record. Only one process should
    write to a store at a time; any number may read.
    """

    def __init__(self, root: str | Path, *, clock: Callable[[], str] = _now):
        super().__init__()
        self.root = Path(root)
        self.records_dir = self.root / "records"
        self.records_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"
        self._clock = clock
        self._index: dict[str, dict] = self._load_manifest()

    # -- manifest ----------------------------------------------------------

    def _load_manifest(self) -> dict[str, dict]:
        if not self.manifest_path.exists():
            return {}
        try:
            data = json.loads(self.manifest_path.read_text(encoding="utf-8"))
            return dict(data["records"])
        except (ValueError, KeyError, TypeError) as exc:
            logger.warning("manifest unreadable (%s); rebuilding from record files", exc)
            return self._rebuild_index()

    def _rebuild_index(self) -> dict[str, dict]:
        index = {}
        for path in sorted(self.records_dir.glob("*.json")):
            try:
                rec = CacheRecord.from_json(json.loads(path.read_text(encoding="utf-8")))
            except (ValueError, KeyError, TypeError, InvalidInputError):
                logger.warning("skipping unreadable record %s", path.name)
                continue
            index[path.stem] = _index_entry(rec)
        return index

    def _write_manifest(self) -> None:
        body = {"version": FORMAT_VERSION,
                "records": {k: self._index[k] for k in sorted(self._index)}}
        _atomic_write(self.manifest_path,
                      json.dumps(body, sort_keys=True, indent=1, ensure_ascii=False).encode("utf-8"))

    def _index_values(self) -> list[dict]:
        return list(self._index.values())

    # -- records -----------------------------------------------------------

    def record_path(self, key: CacheKey) -> Path:
        return self.records_dir / f"{key.digest()}.json"

    def _read(self, key: CacheKey) -> Optional[CacheRecord]:
        path = self.record_path(key)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            return None
        try:
            rec = CacheRecord.from_json(json.loads(raw.decode("utf-8")))
        except (ValueError, KeyError, TypeError, InvalidInputError) as exc:
            raise CorruptRecordError(key, str(exc)) from exc
        if rec.key != key:
            raise CorruptRecordError(key, "stored key does not match its file name")
        return rec

    def put(self, record: CacheRecord) -> None:
        _atomic_write(self.record_path(record.key), record.serialize())
        with self._lock:
            self._index[record.key.digest()] = _index_entry(record)
            self._write_manifest()


class InMemoryQueryStore(QueryStore):
    """Same contract as the disk store, minus persistence."""

    def __init__(self, *, clock: Callable[[], str] = _now):
        super().__init__()
        self._clock = clock
        self._records: dict[CacheKey, CacheRecord] = {}

    def _read(self, key: CacheKey) -> Optional[CacheRecord]:
        return self._records.get(key)

    def put(self, record: CacheRecord) -> None:
        with self._lock:
            self._records[record.key] = record

    def _index_values(self) -> list[dict]:
        with self._lock:
            return [_index_entry(r) for r in self._records.values()]
