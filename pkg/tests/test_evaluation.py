import math

import numpy as np
import pytest
from helpers import FIXTURES, brute_force_ndcg
from hypothesis import given, settings
from hypothesis import strategies as st

from hyqe.core import ContextDoc, ScoredContext
from hyqe.errors import DuplicateIdError, EmptyEvaluationError, InvalidInputError, ParseError
from hyqe.evaluation import Qrels, RankedRun, dcg, evaluate, ndcg_at_k
from hyqe.formats import load_corpus, load_qrels, load_queries, read_run, write_qrels, write_run


def run_of(lists):
    return RankedRun({q: [ScoredContext(d, -float(i), i) for i, d in enumerate(ds, start=1)]
                      for q, ds in lists.items()})


class TestNdcg:
    def test_single_relevant_first(self):
        assert ndcg_at_k(["a", "b"], {"a": 1}, 10) == 1.0

    def test_half(self):
        grades = {"a": 0, "b": 0, "c": 2}
        assert dcg([0, 0, 2], 3) == 1.5
        assert ndcg_at_k(["a", "b", "c"], grades, 3) == 0.5

    def test_all_zero(self):
        assert ndcg_at_k(["a", "b"], {"a": 0, "b": 0}, 10) == 0.0
        assert ndcg_at_k(["a"], {}, 10) == 0.0

    def test_unretrieved_judged_doc_lowers_score(self):
        assert ndcg_at_k(["a"], {"a": 1, "z": 1}, 10) == pytest.approx(1 / (1 + 1 / math.log2(3)))

    def test_truncation_matches_oracle(self):
        ranking = ["a", "b", "c", "d", "e", "f"]
        grades = {"a": 0, "b": 3, "c": 1, "d": 0, "e": 2, "f": 1}
        assert ndcg_at_k(ranking, grades, 10) == pytest.approx(brute_force_ndcg(ranking, grades, 10), abs=1e-12)
        assert ndcg_at_k(ranking, grades, 2) == pytest.approx(brute_force_ndcg(ranking, grades, 2), abs=1e-12)

    def test_invalid_k(self):
        with pytest.raises(InvalidInputError):
            ndcg_at_k(["a"], {"a": 1}, 0)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=1, max_size=6), st.integers(1, 8), st.randoms())
    def test_oracle_and_bounds(self, grade_list, k, rnd):
        docs = [f"d{i}" for i in range(len(grade_list))]
        grades = dict(zip(docs, grade_list))
        ranking = docs[:]
        rnd.shuffle(ranking)
        v = ndcg_at_k(ranking, grades, k)
        assert 0.0 <= v <= 1.0 + 1e-15
        assert v == pytest.approx(brute_force_ndcg(ranking, grades, k), abs=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=2, max_size=12), st.integers(1, 12), st.data())
    def test_promoting_worse_doc_never_helps(self, grade_list, k, data):
        docs = [f"d{i}" for i in range(len(grade_list))]
        grades = dict(zip(docs, grade_list))
        i = data.draw(st.integers(0, len(docs) - 2))
        j = data.draw(st.integers(i + 1, len(docs) - 1))
        if grades[docs[i]] < grades[docs[j]]:
            docs[i], docs[j] = docs[j], docs[i]
        # Now the better doc sits above; swapping it below must not help.
        swapped = docs[:]
        swapped[i], swapped[j] = docs[j], docs[i]
        assert ndcg_at_k(swapped, grades, k) <= ndcg_at_k(docs, grades, k) + 1e-15


class TestEvaluate:
    def test_ideal_run(self):
        qrels = Qrels({"q1": {"a": 2, "b": 1}, "q2": {"c": 1}})
        report = evaluate(run_of({"q1": ["a", "b"], "q2": ["c"]}), qrels)
        assert report.mean == 1.0

    def test_mean_of_half_and_one(self):
        qrels = Qrels({"q1": {"a": 0, "b": 0, "c": 2}, "q2": {"x": 1}})
        report = evaluate(run_of({"q1": ["a", "b", "c"], "q2": ["x"]}), qrels, k=3)
        assert report.per_query == {"q1": 0.5, "q2": 1.0}
        assert report.mean == 0.75
        assert report.format().splitlines()[-1] == "ndcg_cut_3\tall\t0.7500"

    def test_missing_and_skipped(self):
        qrels = Qrels({"q1": {"a": 1}, "q2": {"b": 1}, "q3": {"c": 0}})
        report = evaluate(run_of({"q1": ["a"], "q3": ["c"]}), qrels)
        assert report.missing == ["q2"] and report.skipped == ["q3"]
        assert report.mean == 0.5
        assert report.to_dict()["per_query"] == {"q1": 1.0, "q2": 0.0}

    def test_empty_intersection(self):
        with pytest.raises(EmptyEvaluationError):
            evaluate(run_of({"other": ["a"]}), Qrels({"q1": {"a": 1}}))


class TestFormats:
    def test_qrels_line(self, tmp_path):
        p = tmp_path / "q.txt"
        p.write_text("q1 0 d3 2\n")
        assert load_qrels(p).judgments == {"q1": {"d3": 2}}

    def test_qrels_tsv_header_and_negative(self, tmp_path, caplog):
        p = tmp_path / "q.tsv"
        p.write_text("query-id\tcorpus-id\tscore\nq1\td1\t1\nq1\td2\t-2\n")
        assert load_qrels(p).judgments == {"q1": {"d1": 1, "d2": 0}}
        assert "negative grade" in caplog.text

    def test_qrels_errors(self, tmp_path):
        p = tmp_path / "q.txt"
        p.write_text("q1 0 d1 1\n\nq1 0 d2\n")
        with pytest.raises(ParseError) as ei:
            load_qrels(p)
        assert ei.value.line_no == 3 and ":3:" in str(ei.value)
        p.write_text("q1 0 d1 1\nq1 0 d1 x\n")
        with pytest.raises(ParseError, match=":2:"):
            load_qrels(p)
        p.write_text("q1 0 d1 1\nq1 0 d1 2\n")
        with pytest.raises(DuplicateIdError):
            load_qrels(p)

    def test_corpus_record(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"_id":"d1","title":"T","text":"X"}\n{"_id": 7, "text": "Y"}\n')
        corpus = load_corpus(p)
        assert corpus["d1"] == ContextDoc(id="d1", title="T", text="X")
        assert corpus["7"] == ContextDoc("7", "Y")

    def test_corpus_errors(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"_id":"d1","text":"X"}\nnot json\n')
        with pytest.raises(ParseError) as ei:
            load_corpus(p)
        assert ei.value.line_no == 2
        p.write_text('{"_id":"d1","text":"X"}\n{"_id":"d1","text":"Y"}\n')
        with pytest.raises(DuplicateIdError):
            load_corpus(p)

    def test_queries(self, tmp_path):
        p = tmp_path / "q.jsonl"
        p.write_text('{"_id":"q1","text":"what"}\n{"_id":"q2","text":""}\n')
        with pytest.raises(ParseError, match=":2:"):
            load_queries(p)
        p.write_text('{"_id":"q1","text":"what"}\n')
        assert load_queries(p)["q1"].text == "what"

    def test_run_round_trip(self, tmp_path):
        run = RankedRun({"q1": [ScoredContext("a", 0.1 + 0.2, 1), ScoredContext("b", -1e-300, 2)],
                         "q2": [ScoredContext("c", np.float64(1 / 3), 1)]}, tag="t")
        p = tmp_path / "out.run"
        write_run(run, p)
        back = read_run(p)
        assert back == run
        assert "np.float64" not in p.read_text()

    def test_read_run_orders_by_rank(self, tmp_path):
        p = tmp_path / "r.run"
        p.write_text("q1 Q0 b 5 1.0 x\nq1 Q0 a 2 2.0 x\n")
        run = read_run(p)
        assert [(s.context_id, s.rank) for s in run.rankings["q1"]] == [("a", 1), ("b", 2)]

    def test_run_errors(self, tmp_path):
        p = tmp_path / "r.run"
        p.write_text("q1 Q0 a 1 1.0 x\nq1 Q0 b 2 x\n")
        with pytest.raises(ParseError, match=":2:"):
            read_run(p)
        p.write_text("q1 Q0 a 1 1.0 x\nq1 Q0 a 2 0.5 x\n")
        with pytest.raises(DuplicateIdError):
            read_run(p)

    def test_canonical_files_round_trip(self, tmp_path):
        for name, reader, writer in [("canonical.run", read_run, write_run),
                                     ("canonical.qrels", load_qrels, write_qrels)]:
            out = tmp_path / name
            writer(reader(FIXTURES / name), out)
            assert out.read_bytes() == (FIXTURES / name).read_bytes()
