import json
import subprocess
import sys
import threading
import time

import pytest

from hyqe.cache import CacheRecord, GenerationDeps, HypotheticalQueryStore, InMemoryQueryStore
from hyqe.core import ContextDoc, Embedding
from hyqe.errors import CorruptRecordError, ProviderError
from hyqe.genqueries import BUILTIN_TEMPLATES
from hyqe.providers import (
    PLAIN_WRAPPER,
    CountingEmbedder,
    GenerationParams,
    HashEmbedder,
    ScriptedGenerator,
)


def fixed_clock():
    return "2024-01-01T00:00:00.000000+00:00"


@pytest.fixture
def store(tmp_path):
    return HypotheticalQueryStore(tmp_path / "store", clock=fixed_clock)


def make_deps(generator=None, embedder=None, template="default"):
    gen = generator or ScriptedGenerator(fallback=lambda p: "What is it?\nWhy is it?")
    emb = embedder or CountingEmbedder(HashEmbedder(8))
    return GenerationDeps(gen, emb, BUILTIN_TEMPLATES[template], GenerationParams(), PLAIN_WRAPPER)


DOC = ContextDoc("d1", "Some passage text.")


class TestGetPut:
    def test_unknown_key(self, store):
        deps = make_deps()
        assert store.get(deps.key_for("nope")) is None

    def test_round_trip(self, store):
        deps = make_deps()
        key = deps.key_for("d1")
        rec = CacheRecord(key, ["a?", "b?"], [Embedding([1.0, 0.5]), Embedding([0.1, 1e-17])], "emb", fixed_clock())
        store.put(rec)
        assert store.get(key) == rec
        assert key in store

    def test_reopen_is_byte_identical(self, tmp_path):
        root = tmp_path / "store"
        deps = make_deps()
        first = HypotheticalQueryStore(root, clock=fixed_clock)
        rec = first.get_or_generate(deps.key_for("d1"), DOC, deps)
        again = HypotheticalQueryStore(root).get(deps.key_for("d1"))
        assert again.serialize() == rec.serialize()
        assert again == rec

    def test_readable_from_another_process(self, tmp_path):
        root = tmp_path / "store"
        deps = make_deps()
        key = deps.key_for("d1")
        rec = HypotheticalQueryStore(root).get_or_generate(key, DOC, deps)
        code = (
            "import sys, json\n"
            "from hyqe.cache import HypotheticalQueryStore, CacheKey\n"
            "key = CacheKey.from_dict(json.loads(sys.argv[2]))\n"
            "sys.stdout.buffer.write(HypotheticalQueryStore(sys.argv[1]).get(key).serialize())\n"
        )
        out = subprocess.run([sys.executable, "-c", code, str(root), json.dumps(key.to_dict())],
                             capture_output=True, check=True)
        assert out.stdout == rec.serialize()

    def test_corrupt_record(self, store):
        deps = make_deps()
        key = deps.key_for("d1")
        store.record_path(key).write_text("{not json")
        with pytest.raises(CorruptRecordError) as info:
            store.get(key)
        assert info.value.key == key

    def test_layout(self, store):
        deps = make_deps()
        key = deps.key_for("d1")
        store.get_or_generate(key, DOC, deps)
        assert (store.root / "manifest.json").is_file()
        assert (store.root / "records" / f"{key.digest()}.json").is_file()
        manifest = json.loads((store.root / "manifest.json").read_text())
        assert manifest["records"][key.digest()]["n_queries"] == 2

    def test_manifest_rebuilt_when_damaged(self, tmp_path):
        root = tmp_path / "store"
        deps = make_deps()
        HypotheticalQueryStore(root).get_or_generate(deps.key_for("d1"), DOC, deps)
        (root / "manifest.json").write_text("garbage")
        assert HypotheticalQueryStore(root).stats()["records"] == 1

    def test_key_ordering(self):
        deps = make_deps()
        keys = [deps.key_for(c) for c in ("b", "a", "c")]
        assert [k.context_id for k in sorted(keys)] == ["a", "b", "c"]


class TestGetOrGenerate:
    def test_hit_skips_generator(self, store):
        gen = ScriptedGenerator(fallback=lambda p: "Q?")
        deps = make_deps(gen)
        key = deps.key_for("d1")
        r1 = store.get_or_generate(key, DOC, deps)
        r2 = store.get_or_generate(key, DOC, deps)
        assert gen.calls == 1
        assert r1 == r2
        assert store.stats()["hits"] == 1 and store.stats()["misses"] == 1

    def test_embeddings_aligned(self, store):
        deps = make_deps()
        rec = store.get_or_generate(deps.key_for("d1"), DOC, deps)
        assert len(rec.embeddings) == len(rec.queries) == 2

    def test_single_flight(self, tmp_path):
        release = threading.Event()

        def slow(prompt):
            release.wait(5)
            return "Only once?"

        gen = ScriptedGenerator(fallback=slow)
        deps = make_deps(gen)
        store = HypotheticalQueryStore(tmp_path / "s")
        key = deps.key_for("d1")
        results = []
        workers = [threading.Thread(target=lambda: results.append(store.get_or_generate(key, DOC, deps)))
                   for _ in range(2)]
        for w in workers:
            w.start()
        time.sleep(0.1)
        release.set()
        for w in workers:
            w.join()
        assert gen.calls == 1
        assert results[0] == results[1]
        assert store.stats()["misses"] == 1 and store.stats()["hits"] == 1

    def test_different_embedder_reuses_queries(self, store):
        gen = ScriptedGenerator(fallback=lambda p: "A?\nB?\nC?")
        first = make_deps(gen)
        rec1 = store.get_or_generate(first.key_for("d1"), DOC, first)
        emb2 = CountingEmbedder(HashEmbedder(8, seed=99))
        second = make_deps(gen, emb2)
        rec2 = store.get_or_generate(second.key_for("d1"), DOC, second)
        assert gen.calls == 1
        assert emb2.texts == len(rec1.queries) == 3
        assert rec2.queries == rec1.queries
        assert rec2.embedder_name == emb2.name
        assert rec2.embeddings != rec1.embeddings

    def test_failure_leaves_no_record(self, store):
        gen = ScriptedGenerator(fail_on=lambda p: True)
        deps = make_deps(gen)
        key = deps.key_for("d1")
        with pytest.raises(ProviderError):
            store.get_or_generate(key, DOC, deps)
        assert store.get(key) is None
        assert store.stats()["records"] == 0

    def test_embedder_failure_leaves_no_record(self, store):
        class Broken:
            name = "broken"

            def embed(self, texts):
                raise ProviderError("embedder down")

        deps = make_deps(embedder=Broken())
        key = deps.key_for("d1")
        with pytest.raises(ProviderError):
            store.get_or_generate(key, DOC, deps)
        assert store.get(key) is None

    def test_idempotent(self, store):
        deps = make_deps()
        key = deps.key_for("d1")
        recs = [store.get_or_generate(key, DOC, deps) for _ in range(5)]
        assert all(r == recs[0] for r in recs)

    def test_empty_context_record(self, store):
        deps = make_deps()
        rec = store.get_or_generate(deps.key_for("e"), ContextDoc("e", ""), deps)
        assert rec.queries == [] and rec.embeddings == []


class TestStats:
    def test_fresh(self, store):
        assert store.stats() == {"records": 0, "queries": 0, "hits": 0, "misses": 0, "reembeds": 0}

    def test_counts(self, store):
        deps = make_deps()
        for cid in ("a", "b", "c"):
            store.get_or_generate(deps.key_for(cid), ContextDoc(cid, f"text {cid}."), deps)
        for cid in ("a", "b"):
            store.get_or_generate(deps.key_for(cid), ContextDoc(cid, f"text {cid}."), deps)
        s = store.stats()
        assert (s["misses"], s["hits"], s["records"], s["queries"]) == (3, 2, 3, 6)

    def test_counters_reset_on_reopen(self, tmp_path):
        deps = make_deps()
        s1 = HypotheticalQueryStore(tmp_path / "s")
        s1.get_or_generate(deps.key_for("a"), ContextDoc("a", "x."), deps)
        s2 = HypotheticalQueryStore(tmp_path / "s")
        assert s2.stats() == {"records": 1, "queries": 2, "hits": 0, "misses": 0, "reembeds": 0}


def test_in_memory_store_same_contract():
    gen = ScriptedGenerator(fallback=lambda p: "Q?")
    deps = make_deps(gen)
    store = InMemoryQueryStore()
    key = deps.key_for("d1")
    store.get_or_generate(key, DOC, deps)
    store.get_or_generate(key, DOC, deps)
    assert gen.calls == 1
    assert store.stats()["records"] == 1 and store.stats()["hits"] == 1


def test_amortization_bound(tmp_path):
    """Generator calls never exceed the number of distinct cold keys."""
    gen = ScriptedGenerator(fallback=lambda p: "Q1?\nQ2?")
    deps = make_deps(gen)
    store = HypotheticalQueryStore(tmp_path / "s")
    docs = [ContextDoc(f"d{i}", f"passage {i}.") for i in range(6)]
    workload = [docs[i % 6] for i in range(40)] + docs[:3]
    for d in workload:
        store.get_or_generate(deps.key_for(d.id), d, deps)
    assert gen.calls <= 6
    assert store.stats()["misses"] == 6
