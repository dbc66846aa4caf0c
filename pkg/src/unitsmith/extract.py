"""Function extraction, import slicing, package filtering, and safety screening.

Extraction walks each document's syntax tree and lifts top-level function
definitions into standalone units. Only the module imports a unit actually
references are attached (import slicing); over-attachment is tolerated,
under-attachment is not, so star imports are always attached. Class methods,
nested functions, and decorated functions are skipped: they depend on context
that breaks the standalone-execution contract.
"""

from __future__ import annotations

import ast
import io
import re
import tokenize
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .ids import content_id
from .ingest import SourceDocument

MAX_FUNCTION_CHARS = 4096


@dataclass(frozen=True)
class ImportStatement:
    """One module-level import, kept as exact source text."""

    text: str
    root_package: str

    def to_record(self) -> dict:
        return {"text": self.text, "root_package": self.root_package}

    @classmethod
    def from_record(cls, record: dict) -> "ImportStatement":
        return cls(text=record["text"], root_package=record["root_package"])


@dataclass
class _SlicedImport:
    """Parsed view of an import used during slicing; not serialized."""

    statement: ImportStatement
    roots: set[str]
    bound_names: set[str]
    is_star: bool


@dataclass(frozen=True)
class FunctionUnit:
    """A standalone function with the imports it needs and its provenance."""

    unit_id: str
    doc_id: str
    imports: tuple[ImportStatement, ...]
    name: str
    signature: str
    body: str
    docstring: str | None
    packages: frozenset[str]
    span: tuple[int, int]

    @property
    def source(self) -> str:
        """Imports followed by the function text; what the sandbox executes."""
        lines = [imp.text for imp in self.imports]
        if lines:
            return "\n".join(lines) + "\n\n" + self.body
        return self.body

    def to_record(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "doc_id": self.doc_id,
            "imports": [imp.to_record() for imp in self.imports],
            "name": self.name,
            "signature": self.signature,
            "body": self.body,
            "docstring": self.docstring,
            "packages": sorted(self.packages),
            "span": list(self.span),
        }

    @classmethod
    def from_record(cls, record: dict) -> "FunctionUnit":
        return cls(
            unit_id=record["unit_id"],
            doc_id=record["doc_id"],
            imports=tuple(ImportStatement.from_record(r) for r in record["imports"]),
            name=record["name"],
            signature=record["signature"],
            body=record["body"],
            docstring=record.get("docstring"),
            packages=frozenset(record["packages"]),
            span=tuple(record["span"]),
        )


@dataclass(frozen=True)
class PackageAllowlist:
    packages: frozenset[str]

    @classmethod
    def from_file(cls, path: str | Path) -> "PackageAllowlist":
        return cls(packages=frozenset(read_config_lines(path)))


@dataclass
class ExtractStats:
    docs: int = 0
    parse_failures: int = 0
    functions_seen: int = 0
    skipped_decorated: int = 0
    skipped_too_long: int = 0
    units: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def to_report(self) -> dict:
        return {
            "docs": self.docs,
            "parse_failures": self.parse_failures,
            "functions_seen": self.functions_seen,
            "skipped_decorated": self.skipped_decorated,
            "skipped_too_long": self.skipped_too_long,
            "units": self.units,
            "diagnostics": list(self.diagnostics),
        }


def read_config_lines(path: str | Path) -> list[str]:
    """Read a plain-text config file: one entry per line, '#' comments."""
    entries = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            entries.append(line)
    return entries


def _identifier_tokens(source: str) -> set[str]:
    names = set()
    try:
        for token in tokenize.generate_tokens(io.StringIO(source).readline):
            if token.type == tokenize.NAME:
                names.add(token.string)
    except (tokenize.TokenError, IndentationError):
        pass
    return names


def _line_offsets(source: str) -> list[int]:
    offsets = [0]
    for line in source.splitlines(keepends=True):
        offsets.append(offsets[-1] + len(line))
    return offsets


def _char_offset(offsets: list[int], lineno: int, col: int) -> int:
    return offsets[lineno - 1] + col


def _collect_imports(tree: ast.Module, source: str) -> list[_SlicedImport]:
    collected = []
    for node in tree.body:
        if isinstance(node, ast.Import):
            text = ast.get_source_segment(source, node)
            if text is None:
                continue
            roots = {alias.name.split(".")[0] for alias in node.names}
            bound = {alias.asname or alias.name.split(".")[0] for alias in node.names}
            first_root = node.names[0].name.split(".")[0]
            collected.append(
                _SlicedImport(ImportStatement(text, first_root), roots, bound, is_star=False)
            )
        elif isinstance(node, ast.ImportFrom):
            if node.level or not node.module:
                continue  # relative imports cannot resolve standalone
            text = ast.get_source_segment(source, node)
            if text is None:
                continue
            root = node.module.split(".")[0]
            star = any(alias.name == "*" for alias in node.names)
            bound = {alias.asname or alias.name for alias in node.names if alias.name != "*"}
            collected.append(_SlicedImport(ImportStatement(text, root), {root}, bound, is_star=star))
    return collected


def _signature_text(body: str) -> str:
    """The def header through the colon that ends it, tolerant of
    multi-line signatures and colons nested in brackets or lambdas."""
    offsets = _line_offsets(body)
    depth = 0
    for token in tokenize.generate_tokens(io.StringIO(body).readline):
        if token.type != tokenize.OP:
            continue
        if token.string in "([{":
            depth += 1
        elif token.string in ")]}":
            depth -= 1
        elif token.string == ":" and depth == 0:
            end = _char_offset(offsets, token.end[0], token.end[1])
            return body[:end]
    raise ValueError("no header-terminating colon found")


def extract_functions(
    doc: SourceDocument,
    stats: ExtractStats | None = None,
    max_function_chars: int = MAX_FUNCTION_CHARS,
) -> list[FunctionUnit]:
    """Extract every top-level, undecorated function with its sliced imports.

    Unparseable documents yield an empty list and a parse diagnostic.
    """
    stats = stats if stats is not None else ExtractStats()
    stats.docs += 1
    try:
        tree = ast.parse(doc.content)
    except (SyntaxError, ValueError) as exc:
        stats.parse_failures += 1
        stats.diagnostics.append(f"{doc.path}: parse failure: {exc}")
        return []

    imports = _collect_imports(tree, doc.content)
    offsets = _line_offsets(doc.content)
    units = []
    for node in tree.body:
        if not isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            continue
        stats.functions_seen += 1
        if node.decorator_list:
            stats.skipped_decorated += 1
            continue
        body = ast.get_source_segment(doc.content, node)
        if body is None:
            continue
        if len(body) > max_function_chars:
            stats.skipped_too_long += 1
            continue
        try:
            signature = _signature_text(body)
        except (ValueError, tokenize.TokenError, IndentationError):
            continue
        referenced = _identifier_tokens(body)
        sliced = [
            imp
            for imp in imports
            if imp.is_star or (imp.bound_names | imp.roots) & referenced
        ]
        packages = frozenset().union(*(imp.roots for imp in sliced)) if sliced else frozenset()
        span = (
            _char_offset(offsets, node.lineno, node.col_offset),
            _char_offset(offsets, node.end_lineno, node.end_col_offset),
        )
        units.append(
            FunctionUnit(
                unit_id=content_id(doc.doc_id, f"{span[0]}:{span[1]}", body),
                doc_id=doc.doc_id,
                imports=tuple(imp.statement for imp in sliced),
                name=node.name,
                signature=signature,
                body=body,
                docstring=ast.get_docstring(node, clean=False),
                packages=packages,
                span=span,
            )
        )
        stats.units += 1
    return units


def filter_by_packages(units: Sequence[FunctionUnit], allowlist: PackageAllowlist) -> list[FunctionUnit]:
    """Keep exactly the units referencing at least one allowlisted package."""
    return [unit for unit in units if unit.packages & allowlist.packages]


def compile_denylist(patterns: Iterable[str]) -> list[re.Pattern]:
    return [re.compile(p) for p in patterns]


def safety_screen(units: Sequence[FunctionUnit], denylist: Sequence[re.Pattern]) -> list[FunctionUnit]:
    """Drop units whose source matches any forbidden-construct pattern."""
    survivors = []
    for unit in units:
        source = unit.source
        if any(pattern.search(source) for pattern in denylist):
            continue
        survivors.append(unit)
    return survivors


def write_units(units: Iterable[FunctionUnit], destination: str | Path) -> int:
    import json

    count = 0
    with Path(destination).open("w", encoding="utf-8") as handle:
        for unit in units:
            handle.write(json.dumps(unit.to_record(), sort_keys=True) + "\n")
            count += 1
    return count


def read_units(source: str | Path) -> Iterator[FunctionUnit]:
    import json

    with Path(source).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                yield FunctionUnit.from_record(json.loads(line))
