"""
Tests for the chunk store, chunk file loading and the filing splitter.
"""

import json

import pytest

from fincards_backend.exceptions import (
    ChunkNotFoundError,
    CorpusIntegrityError,
    CorpusParseError,
    EmptyCorpusError,
)
from fincards_backend.services.corpus.service import Chunk, ChunkStore, dump_chunks, get_chunk, load_chunks, split_filing

TEST_FILING = """PART II

Item 7. Management's Discussion and Analysis

RESULTS OF OPERATIONS

Revenue increased 12% to $3.2 billion in fiscal 2023.

Operating income was $410 million.

Item 8. Financial Statements

Total assets were $9.1 billion as of December 31, 2023.
"""


def write_records(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def record(i, doc_id="doc", **overrides):
    base = {"chunk_id": f"{doc_id}#{i}", "doc_id": doc_id, "chunk_index": i, "section_path": [], "text": f"paragraph {i}"}
    base.update(overrides)
    return base


def test_split_filing_paths_and_ids():
    """Test paragraph splitting, heading levels and chunk ids."""
    store = split_filing(TEST_FILING, "acme")
    assert store.length == 7
    assert [c.chunk_id for c in store][:2] == ["acme#0", "acme#1"]
    revenue = store.get_chunk("acme#3")
    assert revenue.text.startswith("Revenue increased")
    assert revenue.section_path == ("PART II", "Item 7. Management's Discussion and Analysis", "RESULTS OF OPERATIONS")
    assets = store.get_chunk("acme#6")
    assert assets.section_path == ("PART II", "Item 8. Financial Statements")


def test_split_filing_three_paragraphs():
    store = split_filing("One para.\n\nTwo para.\n\n\nThree para.\n", "d")
    assert [c.text for c in store] == ["One para.", "Two para.", "Three para."]


def test_split_filing_empty():
    with pytest.raises(EmptyCorpusError):
        split_filing("  \n\n ", "d")


def test_split_is_deterministic(tmp_path):
    first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    dump_chunks(split_filing(TEST_FILING, "acme"), first)
    dump_chunks(split_filing(TEST_FILING, "acme"), second)
    assert first.read_bytes() == second.read_bytes()


def test_load_round_trip(tmp_path):
    path = tmp_path / "chunks.jsonl"
    store = split_filing(TEST_FILING, "acme")
    dump_chunks(store, path)
    loaded = load_chunks(path)
    assert loaded == store
    assert loaded.doc_id == "acme"
    assert "acme#3" in loaded
    assert get_chunk(loaded, "acme#3").chunk_index == 3


def test_load_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "chunks.jsonl"
    write_records(path, [record(0), record(1), record(2, chunk_id="doc#1")])
    with pytest.raises(CorpusIntegrityError) as excinfo:
        load_chunks(path)
    assert excinfo.value.line_numbers == [2, 3]


def test_load_rejects_index_gap(tmp_path):
    path = tmp_path / "chunks.jsonl"
    write_records(path, [record(0), record(2)])
    with pytest.raises(CorpusIntegrityError):
        load_chunks(path)


def test_load_reports_bad_line(tmp_path):
    path = tmp_path / "chunks.jsonl"
    path.write_text(json.dumps(record(0)) + "\n{not json\n", encoding="utf-8")
    with pytest.raises(CorpusParseError) as excinfo:
        load_chunks(path)
    assert excinfo.value.line_number == 2


def test_load_rejects_blank_text(tmp_path):
    path = tmp_path / "chunks.jsonl"
    write_records(path, [record(0, text="   ")])
    with pytest.raises(CorpusParseError):
        load_chunks(path)


def test_load_rejects_foreign_doc_id(tmp_path):
    path = tmp_path / "chunks.jsonl"
    write_records(path, [record(0), record(1, doc_id="other", chunk_id="doc#1")])
    with pytest.raises(CorpusIntegrityError):
        load_chunks(path)


def test_load_empty_file(tmp_path):
    path = tmp_path / "chunks.jsonl"
    path.write_text("\n", encoding="utf-8")
    with pytest.raises(EmptyCorpusError):
        load_chunks(path)


def test_chunk_ids_are_case_sensitive():
    store = ChunkStore("d", [Chunk(chunk_id="Doc#0", doc_id="d", chunk_index=0, text="x")])
    assert "doc#0" not in store
    with pytest.raises(ChunkNotFoundError):
        store.get_chunk("doc#0")
