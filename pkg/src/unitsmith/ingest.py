"""Corpus ingestion: streaming reads, exact dedup, benchmark decontamination.

The corpus format is line-delimited JSON with required string fields ``path``
and ``content`` and an optional ``language``. Documents are identified by a
content hash, so duplicates are detected regardless of path. Decontamination
drops any document sharing at least one verbatim token shingle with a
blocklist built from benchmark items; a token is a maximal run of
non-whitespace and the default shingle length is 13 tokens.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .ids import content_id

DEFAULT_SHINGLE_TOKENS = 13
MIN_SHINGLE_TOKENS = 8

SUPPORTED_FORMATS = ("jsonl",)


class CorpusFormatError(ValueError):
    """Raised when the requested corpus format is not supported."""


@dataclass(frozen=True)
class SourceDocument:
    doc_id: str
    path: str
    content: str
    language_tag: str = ""

    @classmethod
    def from_content(cls, path: str, content: str, language_tag: str = "") -> "SourceDocument":
        return cls(doc_id=content_id(content), path=path, content=content, language_tag=language_tag)

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "path": self.path,
            "content": self.content,
            "language_tag": self.language_tag,
        }

    @classmethod
    def from_record(cls, record: dict) -> "SourceDocument":
        return cls(
            doc_id=record["doc_id"],
            path=record["path"],
            content=record["content"],
            language_tag=record.get("language_tag", ""),
        )


@dataclass
class IngestStats:
    """Counters accumulated across the ingest -> dedup -> decontaminate chain."""

    records: int = 0
    skipped: int = 0
    duplicates: int = 0
    contaminated: int = 0
    drops_by_benchmark: Counter = field(default_factory=Counter)
    diagnostics: list[str] = field(default_factory=list)

    def to_report(self) -> dict:
        return {
            "records": self.records,
            "skipped": self.skipped,
            "duplicates": self.duplicates,
            "contaminated": self.contaminated,
            "drops_by_benchmark": dict(sorted(self.drops_by_benchmark.items())),
            "diagnostics": list(self.diagnostics),
        }


def tokenize(text: str) -> list[str]:
    """Maximal runs of non-whitespace, case preserved."""
    return text.split()


def shingles(text: str, n: int) -> set[str]:
    tokens = tokenize(text)
    return {" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


@dataclass
class Blocklist:
    """Token shingles of benchmark text that must not leak into the dataset."""

    shingles: set[str]
    n: int
    source_names: list[str]
    shingle_sources: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n < MIN_SHINGLE_TOKENS:
            raise ValueError(f"shingle length must be >= {MIN_SHINGLE_TOKENS} tokens, got {self.n}")

    @classmethod
    def empty(cls, n: int = DEFAULT_SHINGLE_TOKENS) -> "Blocklist":
        return cls(shingles=set(), n=n, source_names=[])

    @classmethod
    def from_texts(cls, items: Iterable[tuple[str, str]], n: int = DEFAULT_SHINGLE_TOKENS) -> "Blocklist":
        """Build from (benchmark name, text) pairs."""
        block = cls(shingles=set(), n=n, source_names=[])
        for name, text in items:
            block.source_names.append(name)
            for shingle in shingles(text, n):
                block.shingles.add(shingle)
                block.shingle_sources.setdefault(shingle, name)
        return block

    @classmethod
    def from_directory(cls, directory: str | Path, n: int = DEFAULT_SHINGLE_TOKENS) -> "Blocklist":
        """Build from a directory of plain-text files, one benchmark item per file."""
        root = Path(directory)
        if not root.is_dir():
            raise FileNotFoundError(f"blocklist directory not found: {root}")
        items = []
        for path in sorted(root.iterdir()):
            if path.is_file():
                items.append((path.name, path.read_text(encoding="utf-8")))
        return cls.from_texts(items, n=n)


def ingest(source: str | Path, format: str = "jsonl", stats: IngestStats | None = None) -> Iterator[SourceDocument]:
    """Stream documents from a corpus file, skipping malformed records.

    Records failing JSON parse, schema validation, or UTF-8 decode are
    counted on ``stats`` and skipped; an unreadable source raises.
    """
    if format not in SUPPORTED_FORMATS:
        raise CorpusFormatError(f"unsupported corpus format {format!r}; supported: {SUPPORTED_FORMATS}")
    stats = stats if stats is not None else IngestStats()
    path = Path(source)
    # Open in binary and decode per record so one undecodable line cannot
    # corrupt or abort the whole stream.
    with path.open("rb") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            stats.records += 1
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                stats.skipped += 1
                stats.diagnostics.append(f"{path.name}:{line_no}: undecodable record: {exc}")
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as exc:
                stats.skipped += 1
                stats.diagnostics.append(f"{path.name}:{line_no}: malformed JSON: {exc.msg}")
                continue
            if not isinstance(record, dict) or not isinstance(record.get("path"), str) or not isinstance(record.get("content"), str):
                stats.skipped += 1
                stats.diagnostics.append(f"{path.name}:{line_no}: missing required string fields 'path'/'content'")
                continue
            yield SourceDocument.from_content(
                path=record["path"],
                content=record["content"],
                language_tag=record.get("language", "") or "",
            )


def dedup_exact(docs: Iterable[SourceDocument], stats: IngestStats | None = None) -> Iterator[SourceDocument]:
    """Keep the first occurrence of each doc_id, preserving order."""
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            if stats is not None:
                stats.duplicates += 1
            continue
        seen.add(doc.doc_id)
        yield doc


def decontaminate(
    docs: Iterable[SourceDocument],
    blocklist: Blocklist,
    stats: IngestStats | None = None,
) -> Iterator[SourceDocument]:
    """Drop documents sharing any n-token shingle with the blocklist."""
    for doc in docs:
        if blocklist.shingles:
            hits = shingles(doc.content, blocklist.n) & blocklist.shingles
            if hits:
                if stats is not None:
                    stats.contaminated += 1
                    source = blocklist.shingle_sources.get(min(hits), "unknown")
                    stats.drops_by_benchmark[source] += 1
                continue
        yield doc


def write_documents(docs: Iterable[SourceDocument], destination: str | Path) -> int:
    """Write documents as line-delimited JSON; returns the count written."""
    count = 0
    with Path(destination).open("w", encoding="utf-8") as handle:
        for doc in docs:
            handle.write(json.dumps(doc.to_record(), sort_keys=True) + "\n")
            count += 1
    return count


def read_documents(source: str | Path) -> Iterator[SourceDocument]:
    with Path(source).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                yield SourceDocument.from_record(json.loads(line))
