from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from unitsmith.ingest import (
    Blocklist,
    IngestStats,
    SourceDocument,
    decontaminate,
    dedup_exact,
    ingest,
    read_documents,
    shingles,
    write_documents,
)


def _write_corpus(path: Path, records: list) -> Path:
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return path


def test_ingest_single_record(tmp_path: Path) -> None:
    corpus = _write_corpus(tmp_path / "c.jsonl", [{"path": "a.py", "content": "x = 1\n"}])
    stats = IngestStats()
    docs = list(ingest(corpus, "jsonl", stats))
    assert len(docs) == 1
    assert docs[0].path == "a.py"
    assert docs[0].content == "x = 1\n"
    assert stats.skipped == 0


def test_ingest_empty_file(tmp_path: Path) -> None:
    corpus = tmp_path / "c.jsonl"
    corpus.write_text("")
    stats = IngestStats()
    assert list(ingest(corpus, "jsonl", stats)) == []
    assert stats.records == 0
    assert stats.skipped == 0


def test_ingest_skips_record_missing_content(tmp_path: Path) -> None:
    corpus = _write_corpus(
        tmp_path / "c.jsonl",
        [
            {"path": "a.py", "content": "a = 1\n"},
            {"path": "b.py"},
            {"path": "c.py", "content": "c = 3\n"},
        ],
    )
    stats = IngestStats()
    docs = list(ingest(corpus, "jsonl", stats))
    assert [d.path for d in docs] == ["a.py", "c.py"]
    assert stats.records == 3
    assert stats.skipped == 1
    assert "b.py" not in " ".join(d.path for d in docs)


def test_ingest_skips_malformed_json_and_bad_utf8(tmp_path: Path) -> None:
    corpus = tmp_path / "c.jsonl"
    good = json.dumps({"path": "a.py", "content": "ok"}).encode()
    corpus.write_bytes(good + b"\n{not json}\n\xff\xfe broken\n")
    stats = IngestStats()
    docs = list(ingest(corpus, "jsonl", stats))
    assert len(docs) == 1
    assert stats.skipped == 2
    assert len(stats.diagnostics) == 2


def test_ingest_unknown_format_rejected(tmp_path: Path) -> None:
    corpus = _write_corpus(tmp_path / "c.jsonl", [])
    with pytest.raises(ValueError):
        list(ingest(corpus, "parquet"))


def test_ingest_missing_source_is_fatal(tmp_path: Path) -> None:
    with pytest.raises(OSError):
        list(ingest(tmp_path / "nope.jsonl"))


def test_doc_id_is_content_hash() -> None:
    a = SourceDocument.from_content("one/path.py", "same text")
    b = SourceDocument.from_content("other/path.py", "same text")
    c = SourceDocument.from_content("one/path.py", "different text")
    assert a.doc_id == b.doc_id
    assert a.doc_id != c.doc_id


def test_dedup_drops_second_occurrence() -> None:
    a1 = SourceDocument.from_content("a.py", "alpha")
    b = SourceDocument.from_content("b.py", "beta")
    a2 = SourceDocument.from_content("a2.py", "alpha")
    stats = IngestStats()
    survivors = list(dedup_exact([a1, b, a2], stats))
    assert [d.path for d in survivors] == ["a.py", "b.py"]
    assert stats.duplicates == 1


def test_dedup_keeps_all_distinct() -> None:
    docs = [SourceDocument.from_content(f"{i}.py", f"text {i}") for i in range(7)]
    assert list(dedup_exact(docs)) == docs


@given(st.lists(st.sampled_from(["alpha", "beta", "gamma", "delta"]), max_size=30))
def test_dedup_idempotent(contents: list[str]) -> None:
    docs = [SourceDocument.from_content(f"{i}.py", text) for i, text in enumerate(contents)]
    once = list(dedup_exact(docs))
    twice = list(dedup_exact(once))
    assert twice == once
    assert len({d.doc_id for d in once}) == len(once)


def _blocklist_from_span(span: str, n: int = 13) -> Blocklist:
    return Blocklist.from_texts([("bench", span)], n=n)


def test_decontaminate_drops_verbatim_span() -> None:
    span = " ".join(f"tok{i}" for i in range(13))
    doc = SourceDocument.from_content("a.py", f"prefix {span} suffix")
    clean = SourceDocument.from_content("b.py", "nothing shared here at all")
    stats = IngestStats()
    kept = list(decontaminate([doc, clean], _blocklist_from_span(span), stats))
    assert [d.path for d in kept] == ["b.py"]
    assert stats.contaminated == 1
    assert stats.drops_by_benchmark == {"bench": 1}


def test_decontaminate_thirteen_tokens_dropped_twelve_kept() -> None:
    tokens = [f"w{i}" for i in range(13)]
    blocklist = _blocklist_from_span(" ".join(tokens))
    full = SourceDocument.from_content("full.py", "x " + " ".join(tokens) + " y")
    partial = SourceDocument.from_content("partial.py", "x " + " ".join(tokens[:12]) + " y")
    kept = list(decontaminate([full, partial], blocklist))
    assert [d.path for d in kept] == ["partial.py"]


def test_decontaminate_empty_blocklist_keeps_all() -> None:
    docs = [SourceDocument.from_content(f"{i}.py", f"text {i}") for i in range(4)]
    assert list(decontaminate(docs, Blocklist.empty())) == docs


def test_blocklist_rejects_short_shingles() -> None:
    with pytest.raises(ValueError):
        Blocklist(shingles=set(), n=7, source_names=[])


def test_blocklist_from_directory(tmp_path: Path) -> None:
    bench = tmp_path / "bench"
    bench.mkdir()
    (bench / "item1.txt").write_text(" ".join(f"a{i}" for i in range(20)))
    (bench / "item2.txt").write_text("too short to shingle")
    blocklist = Blocklist.from_directory(bench, n=13)
    assert blocklist.source_names == ["item1.txt", "item2.txt"]
    assert len(blocklist.shingles) == 8  # 20 tokens -> 20 - 13 + 1 shingles


@given(
    st.lists(st.text(alphabet="abcdef", min_size=1, max_size=4), min_size=13, max_size=20),
    st.lists(st.text(alphabet="ghijkl", min_size=1, max_size=4), max_size=5),
)
def test_decontamination_soundness(bench_tokens: list[str], padding: list[str]) -> None:
    # Any document containing a verbatim benchmark span of >= n tokens is dropped.
    bench_text = " ".join(bench_tokens)
    blocklist = _blocklist_from_span(bench_text)
    doc = SourceDocument.from_content("d.py", " ".join(padding) + " " + bench_text)
    assert list(decontaminate([doc], blocklist)) == []


def test_shingles_whitespace_normalized() -> None:
    n = 8
    messy = "a\t b\nc  d e f g h"
    tidy = "a b c d e f g h"
    assert shingles(messy, n) == shingles(tidy, n)


def test_pipeline_deterministic(tmp_path: Path) -> None:
    records = [
        {"path": "a.py", "content": "a = 1\n"},
        {"path": "b.py", "content": "b = 2\n"},
        {"path": "dup.py", "content": "a = 1\n"},
    ]
    corpus = _write_corpus(tmp_path / "c.jsonl", records)
    blocklist = _blocklist_from_span(" ".join(f"t{i}" for i in range(13)))

    def run() -> list[str]:
        docs = decontaminate(dedup_exact(ingest(corpus)), blocklist)
        return [json.dumps(d.to_record(), sort_keys=True) for d in docs]

    assert run() == run()


def test_documents_round_trip(tmp_path: Path) -> None:
    docs = [SourceDocument.from_content("a.py", "x = 1\n", "python")]
    out = tmp_path / "docs.jsonl"
    assert write_documents(docs, out) == 1
    assert list(read_documents(out)) == docs
