"""Training-pair construction, export, and package-diversity statistics.

A pair splits a verified refined function at the end of its docstring:
the prefix holds the import statements, the function header, and the
docstring; the completion holds the remaining implementation. Only sources
shaped as imports followed by exactly one function definition are eligible,
so every exported pair reconstructs by simple concatenation. Each record
embeds the validating test suite, making the dataset self-verifying.
"""

from __future__ import annotations

import ast
import json
import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .extract import FunctionUnit
from .ids import HASH_ALGORITHM, content_id
from .refine import RefinedUnit

DEFAULT_BUCKET_EDGES = (1, 10, 100, 1000, 10000)


class PairBuildError(ValueError):
    """The refined source cannot be split into a valid prefix/completion pair."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class TrainingPair:
    pair_id: str
    prefix: str
    completion: str
    candidate_id: str
    packages: frozenset[str]
    suite_source: str
    unit_id: str = ""
    doc_id: str = ""

    def to_record(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "prefix": self.prefix,
            "completion": self.completion,
            "packages": sorted(self.packages),
            "suite": self.suite_source,
            "provenance": {
                "candidate_id": self.candidate_id,
                "unit_id": self.unit_id,
                "doc_id": self.doc_id,
            },
        }

    @classmethod
    def from_record(cls, record: dict) -> "TrainingPair":
        provenance = record.get("provenance", {})
        return cls(
            pair_id=record["pair_id"],
            prefix=record["prefix"],
            completion=record["completion"],
            candidate_id=provenance.get("candidate_id", ""),
            packages=frozenset(record["packages"]),
            suite_source=record["suite"],
            unit_id=provenance.get("unit_id", ""),
            doc_id=provenance.get("doc_id", ""),
        )


@dataclass
class PackageStats:
    per_package_counts: dict[str, int]
    unique_package_count: int
    frequency_buckets: dict[str, int]

    def to_record(self) -> dict:
        return {
            "per_package_counts": dict(sorted(self.per_package_counts.items())),
            "unique_package_count": self.unique_package_count,
            "frequency_buckets": self.frequency_buckets,
        }


def _docstring_end_offset(source: str, func: ast.FunctionDef | ast.AsyncFunctionDef) -> int:
    """Character offset just past the docstring's closing delimiter.

    AST column offsets count UTF-8 bytes, so the math runs over encoded
    lines and converts back to a character offset at the end.
    """
    first = func.body[0] if func.body else None
    if not (
        isinstance(first, ast.Expr)
        and isinstance(first.value, ast.Constant)
        and isinstance(first.value.value, str)
    ):
        raise PairBuildError("no_docstring", "function body does not start with a docstring")
    raw_lines = source.encode("utf-8").splitlines(keepends=True)
    byte_offset = sum(len(line) for line in raw_lines[: first.end_lineno - 1]) + first.end_col_offset
    return len(source.encode("utf-8")[:byte_offset].decode("utf-8"))


def build_pair(unit: RefinedUnit, original: FunctionUnit, suite_source: str) -> TrainingPair:
    """Split a verified refined source into (prefix, completion).

    Raises PairBuildError when the source is not imports + one function,
    when the docstring is missing, or when the implementation itself
    contains import statements (they would leak into the completion).
    """
    if not unit.verified:
        raise PairBuildError("unverified", f"candidate {unit.candidate_id} was never re-verified")
    source = unit.refined_source
    try:
        tree = ast.parse(source)
    except (SyntaxError, ValueError) as exc:
        raise PairBuildError("unparseable", str(exc)) from exc

    functions = [n for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
    others = [
        n for n in tree.body
        if not isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef, ast.Import, ast.ImportFrom))
    ]
    if len(functions) != 1 or others:
        raise PairBuildError(
            "not_imports_plus_function",
            f"{len(functions)} functions, {len(others)} extra module statements",
        )
    func = functions[0]
    if any(isinstance(n, (ast.Import, ast.ImportFrom)) for n in ast.walk(func)):
        raise PairBuildError("local_import", "implementation contains import statements")

    split = _docstring_end_offset(source, func)
    prefix, completion = source[:split], source[split:]

    packages = set()
    for node in tree.body:
        if isinstance(node, ast.Import):
            packages.update(alias.name.split(".")[0] for alias in node.names)
        elif isinstance(node, ast.ImportFrom) and node.module and not node.level:
            packages.add(node.module.split(".")[0])

    return TrainingPair(
        pair_id=content_id(unit.candidate_id, source, suite_source),
        prefix=prefix,
        completion=completion,
        candidate_id=unit.candidate_id,
        packages=frozenset(packages),
        suite_source=suite_source,
        unit_id=original.unit_id,
        doc_id=original.doc_id,
    )


def compute_stats(pairs: Sequence[TrainingPair], bucket_edges: Sequence[int] = DEFAULT_BUCKET_EDGES) -> PackageStats:
    """Count pair membership per package and bucket packages by usage band."""
    counts: Counter[str] = Counter()
    for pair in pairs:
        for package in pair.packages:
            counts[package] += 1
    edges = sorted(set(bucket_edges))
    if not edges or edges[0] < 1:
        raise ValueError("bucket edges must be positive and non-empty")
    buckets = {_band_label(edges, i): 0 for i in range(len(edges))}
    for count in counts.values():
        index = 0
        for i, edge in enumerate(edges):
            if count >= edge:
                index = i
        buckets[_band_label(edges, index)] += 1
    return PackageStats(
        per_package_counts=dict(counts),
        unique_package_count=len(counts),
        frequency_buckets=buckets,
    )


def _band_label(edges: Sequence[int], index: int) -> str:
    if index == len(edges) - 1:
        return f"{edges[index]}+"
    return f"{edges[index]}-{edges[index + 1] - 1}"


def export(
    pairs: Sequence[TrainingPair],
    destination: str | Path,
    config_snapshot: dict | None = None,
    bucket_edges: Sequence[int] = DEFAULT_BUCKET_EDGES,
) -> dict:
    """Write the dataset file and its manifest; returns the manifest.

    The write is atomic (temp file + rename) so a failed export leaves no
    partial dataset behind.
    """
    destination = Path(destination)
    tmp = destination.with_name(destination.name + ".tmp")
    try:
        with tmp.open("w", encoding="utf-8") as handle:
            for pair in pairs:
                handle.write(json.dumps(pair.to_record(), sort_keys=True) + "\n")
        tmp.replace(destination)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise

    digest = hashlib.blake2b(destination.read_bytes(), digest_size=16).hexdigest()
    manifest = {
        "count": len(pairs),
        "file": destination.name,
        "file_hash": digest,
        "hash_algorithm": HASH_ALGORITHM,
        "package_stats": compute_stats(pairs, bucket_edges).to_record(),
        "config": config_snapshot or {},
    }
    manifest_path = destination.with_name(destination.stem + "_manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def read_pairs(source: str | Path) -> list[TrainingPair]:
    pairs = []
    with Path(source).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                pairs.append(TrainingPair.from_record(json.loads(line)))
    return pairs
