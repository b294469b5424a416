"""Corpus loading, validation aggregation, and round-tripping."""

import json

import pytest

from doctrain.corpus import Corpus, Document, load_corpus, save_corpus
from doctrain.errors import ParseError, ValidationError


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write((rec if isinstance(rec, str) else json.dumps(rec)) + "\n")
    return path


GOOD = [
    {"id": "a", "text": "First sentence. Second sentence.",
     "category": "printers"},
    {"id": "b", "sentences": ["Pre-split one.", "Pre-split two."],
     "category": "cameras"},
]


class TestLoadCorpus:
    def test_text_is_split_into_sentences(self, tmp_path):
        corpus = load_corpus(write_jsonl(tmp_path / "c.jsonl", GOOD),
                             "customer_support")
        assert corpus.get("a").sentences == ("First sentence.",
                                             "Second sentence.")

    def test_pre_split_sentences_pass_through(self, tmp_path):
        corpus = load_corpus(write_jsonl(tmp_path / "c.jsonl", GOOD),
                             "customer_support")
        assert corpus.get("b").sentences == ("Pre-split one.", "Pre-split two.")

    def test_blank_lines_are_skipped(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps(GOOD[0]) + "\n\n\n" + json.dumps(GOOD[1]) + "\n")
        assert len(load_corpus(path, "customer_support")) == 2

    def test_all_problems_reported_together_with_line_numbers(self, tmp_path):
        path = write_jsonl(tmp_path / "bad.jsonl", [
            "not json at all",
            {"id": "ok", "text": "Fine.", "category": "x"},
            {"text": "Missing id."},
            {"id": "ok", "text": "Duplicate.", "category": "x"},
        ])
        with pytest.raises(ParseError) as exc:
            load_corpus(path, "customer_support")
        msg = str(exc.value)
        assert "line 1" in msg and "line 3" in msg and "line 4" in msg
        assert "duplicate" in msg.lower()
        assert "first seen on line 2" in msg

    def test_mode_requirements(self, tmp_path):
        no_category = write_jsonl(tmp_path / "n.jsonl",
                                  [{"id": "a", "text": "Hello there."}])
        with pytest.raises(ParseError, match="category"):
            load_corpus(no_category, "customer_support")
        with pytest.raises(ParseError, match="category"):
            load_corpus(no_category, "scientific")
        with pytest.raises(ParseError, match="concepts"):
            load_corpus(no_category, "legal")
        # derived mode has no extra requirements
        assert len(load_corpus(no_category, "derived")) == 1

    def test_unknown_mode_rejected_before_reading(self, tmp_path):
        with pytest.raises(ValidationError, match="warmup"):
            load_corpus(tmp_path / "missing.jsonl", "warmup")

    def test_legal_mode_accepts_concepts(self, tmp_path):
        path = write_jsonl(tmp_path / "l.jsonl", [
            {"id": "a", "text": "Clause one.", "concepts": ["tort", "lease"]},
        ])
        corpus = load_corpus(path, "legal")
        assert corpus.get("a").concepts == frozenset({"tort", "lease"})

    def test_empty_text_flagged(self, tmp_path):
        path = write_jsonl(tmp_path / "e.jsonl", [{"id": "a", "text": "  "}])
        with pytest.raises(ParseError, match="line 1"):
            load_corpus(path, "derived")

    def test_bad_field_types_flagged(self, tmp_path):
        path = write_jsonl(tmp_path / "t.jsonl", [
            {"id": "a", "text": "Ok.", "category": 7},
            {"id": "b", "text": "Ok.", "hierarchy": "not-a-list"},
            {"id": "c", "text": "Ok.", "concepts": [1, 2]},
            {"id": "d", "sentences": ["", "x"]},
        ])
        with pytest.raises(ParseError) as exc:
            load_corpus(path, "derived")
        for n in (1, 2, 3, 4):
            assert f"line {n}" in str(exc.value)

    def test_empty_file_warns_but_loads(self, tmp_path, caplog):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with caplog.at_level("WARNING", logger="doctrain.corpus"):
            corpus = load_corpus(path, "derived")
        assert len(corpus) == 0
        assert any("empty" in r.message for r in caplog.records)

    def test_hierarchy_parsed_as_tuple(self, tmp_path):
        path = write_jsonl(tmp_path / "h.jsonl", [
            {"id": "a", "text": "Ok.", "hierarchy": ["Top", "Leaf"]},
        ])
        doc = load_corpus(path, "derived").get("a")
        assert doc.hierarchy_path == ("Top", "Leaf")


class TestCorpusContainer:
    def docs(self):
        return [Document(id="a", sentences=("S one.",), category="x"),
                Document(id="b", sentences=("S two.",), category="y")]

    def test_lookup_and_iteration(self):
        corpus = Corpus(self.docs(), "customer_support")
        assert len(corpus) == 2
        assert [d.id for d in corpus] == ["a", "b"]
        assert corpus.get("a").category == "x"
        assert corpus.has("b") and not corpus.has("z")

    def test_unknown_id_raises(self):
        with pytest.raises(ValidationError, match="z"):
            Corpus(self.docs(), "customer_support").get("z")

    def test_duplicate_ids_rejected(self):
        docs = self.docs() + [Document(id="a", sentences=("Again.",))]
        with pytest.raises(ValidationError, match="duplicate"):
            Corpus(docs, "customer_support")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValidationError):
            Corpus(self.docs(), "freestyle")


class TestRoundTrip:
    def test_save_then_load_is_identity(self, tmp_path):
        path = write_jsonl(tmp_path / "c.jsonl", [
            {"id": "a", "text": "One. Two more words.", "category": "x",
             "hierarchy": ["Top", "Mid"], "concepts": ["alpha", "beta"]},
            {"id": "b", "sentences": ["Already split."], "category": "y"},
        ])
        first = load_corpus(path, "customer_support")
        out = tmp_path / "again.jsonl"
        save_corpus(first, out)
        second = load_corpus(out, "customer_support")
        assert [d for d in first] == [d for d in second]

    def test_saved_lines_are_valid_sorted_json(self, tmp_path):
        corpus = Corpus([Document(id="a", sentences=("Hi there.",),
                                  concepts=frozenset({"b", "a"}))], "derived")
        out = tmp_path / "c.jsonl"
        save_corpus(corpus, out)
        obj = json.loads(out.read_text().strip())
        assert obj["concepts"] == ["a", "b"]  # deterministic ordering
