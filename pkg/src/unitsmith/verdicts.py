"""Execution verdicts and their bracketed wire form.

A verdict is the structured outcome of running one (function, test suite)
pair: ``pass``, ``fail`` with a map of test method name to traceback text,
or ``error`` with a kind. The wire form is a two-element JSON array,
``["pass", {}]`` / ``["fail", {name: traceback, ...}]`` /
``["error", {"kind": ..., "detail": ...}]``; this exact string is what the
bug-fix agent sees as its execution-result input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

PASS = "pass"
FAIL = "fail"
ERROR = "error"

# Error kinds produced by the sandboxed runner.
ERROR_TIMEOUT = "timeout"
ERROR_IMPORT_MISSING = "import_missing"
ERROR_COLLECTION = "collection_error"
ERROR_CRASH = "crash"
# Synthetic kinds attached by the pipeline itself, never by the runner.
ERROR_PARSE_FAILURE = "parse_failure"
ERROR_PROVIDER = "provider_error"


@dataclass(frozen=True)
class Verdict:
    """Outcome of one execution attempt."""

    status: str
    failures: dict[str, str] = field(default_factory=dict)
    error_kind: str | None = None
    error_detail: str | None = None
    coverage: float | None = None
    wall_time: float = 0.0

    def __post_init__(self) -> None:
        if self.status not in (PASS, FAIL, ERROR):
            raise ValueError(f"unknown verdict status: {self.status!r}")
        if self.status == PASS and (self.failures or self.error_kind):
            raise ValueError("pass verdict must carry no failures or error kind")
        if self.status == FAIL and not self.failures:
            raise ValueError("fail verdict requires a non-empty failures map")
        if self.status == ERROR and not self.error_kind:
            raise ValueError("error verdict requires an error kind")

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_wire(self) -> list:
        """Two-element array form, suitable for JSON embedding."""
        if self.status == PASS:
            return [PASS, {}]
        if self.status == FAIL:
            return [FAIL, dict(self.failures)]
        return [ERROR, {"kind": self.error_kind, "detail": self.error_detail or ""}]

    def to_wire_text(self) -> str:
        """Serialized wire form; pass verdicts are exactly '["pass", {}]'."""
        return json.dumps(self.to_wire())

    def to_record(self) -> dict:
        return {
            "status": self.status,
            "failures": dict(self.failures),
            "error_kind": self.error_kind,
            "error_detail": self.error_detail,
            "coverage": self.coverage,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Verdict":
        return cls(
            status=record["status"],
            failures=dict(record.get("failures") or {}),
            error_kind=record.get("error_kind"),
            error_detail=record.get("error_detail"),
            coverage=record.get("coverage"),
            wall_time=record.get("wall_time", 0.0),
        )

    @classmethod
    def from_wire(cls, wire: list, coverage: float | None = None, wall_time: float = 0.0) -> "Verdict":
        """Parse the two-element array emitted by a sandbox worker."""
        if not isinstance(wire, list) or len(wire) != 2:
            raise ValueError(f"malformed wire verdict: {wire!r}")
        status, payload = wire
        if status == PASS:
            return cls(status=PASS, coverage=coverage, wall_time=wall_time)
        if status == FAIL:
            return cls(status=FAIL, failures=dict(payload), coverage=coverage, wall_time=wall_time)
        if status == ERROR:
            return cls(
                status=ERROR,
                error_kind=payload.get("kind"),
                error_detail=payload.get("detail"),
                coverage=coverage,
                wall_time=wall_time,
            )
        raise ValueError(f"unknown wire status: {status!r}")


def passing() -> Verdict:
    return Verdict(status=PASS)


def failing(failures: dict[str, str], wall_time: float = 0.0) -> Verdict:
    return Verdict(status=FAIL, failures=failures, wall_time=wall_time)


def erroring(kind: str, detail: str = "", wall_time: float = 0.0) -> Verdict:
    return Verdict(status=ERROR, error_kind=kind, error_detail=detail, wall_time=wall_time)


@dataclass(frozen=True)
class ExecutionResult:
    """A verdict tagged with the candidate and repair round it belongs to."""

    candidate_id: str
    round: int
    verdict: Verdict
    attempt: int = 1

    def __post_init__(self) -> None:
        if self.round < 0:
            raise ValueError("round must be >= 0")
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")

    def to_record(self) -> dict:
        record = {"candidate_id": self.candidate_id, "round": self.round, "attempt": self.attempt}
        record.update(self.verdict.to_record())
        return record

    @classmethod
    def from_record(cls, record: dict) -> "ExecutionResult":
        return cls(
            candidate_id=record["candidate_id"],
            round=record["round"],
            verdict=Verdict.from_record(record),
            attempt=record.get("attempt", 1),
        )
