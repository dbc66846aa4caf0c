"""Job and verdict types plus their wire forms.

A verdict's serialized form is a two-element JSON array: ``["pass", {}]``,
``["fail", {test_name: traceback, ...}]``, or ``["error", {"kind": ...,
"detail": ...}]``. The worker's stdout object wraps it together with the
job id, optional coverage fraction, and wall time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

PASS = "pass"
FAIL = "fail"
ERROR = "error"

KIND_TIMEOUT = "timeout"
KIND_IMPORT_MISSING = "import_missing"
KIND_COLLECTION = "collection_error"
KIND_CRASH = "crash"


class JobError(ValueError):
    """The incoming job object violates the wire schema."""


@dataclass(frozen=True)
class RunnerJob:
    job_id: str
    function_source: str
    test_source: str
    timeout_seconds: float
    measure_coverage: bool = False

    @classmethod
    def from_record(cls, record: dict) -> "RunnerJob":
        try:
            job = cls(
                job_id=str(record["job_id"]),
                function_source=record["function_source"],
                test_source=record["test_source"],
                timeout_seconds=float(record["timeout_seconds"]),
                measure_coverage=bool(record.get("measure_coverage", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise JobError(f"malformed job object: {exc}") from exc
        if job.timeout_seconds <= 0:
            raise JobError("timeout_seconds must be > 0")
        if not isinstance(job.function_source, str) or not job.function_source.strip():
            raise JobError("function_source must be non-empty text")
        if not isinstance(job.test_source, str) or not job.test_source.strip():
            raise JobError("test_source must be non-empty text")
        return job

    def to_record(self) -> dict:
        return {
            "job_id": self.job_id,
            "function_source": self.function_source,
            "test_source": self.test_source,
            "timeout_seconds": self.timeout_seconds,
            "measure_coverage": self.measure_coverage,
        }


@dataclass(frozen=True)
class RunnerVerdict:
    status: str
    failures: dict[str, str] = field(default_factory=dict)
    error_kind: str | None = None
    error_detail: str | None = None
    coverage_fraction: float | None = None
    wall_time: float = 0.0

    def __post_init__(self) -> None:
        if self.status not in (PASS, FAIL, ERROR):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == PASS and (self.failures or self.error_kind):
            raise ValueError("pass verdict carries no failures and no error kind")
        if self.status == FAIL and not self.failures:
            raise ValueError("fail verdict requires failures")
        if self.status == ERROR and not self.error_kind:
            raise ValueError("error verdict requires a kind")

    def to_wire(self) -> list:
        if self.status == PASS:
            return [PASS, {}]
        if self.status == FAIL:
            return [FAIL, dict(self.failures)]
        return [ERROR, {"kind": self.error_kind, "detail": self.error_detail or ""}]

    def to_wire_text(self) -> str:
        return json.dumps(self.to_wire())

    def result_object(self, job_id: str) -> dict:
        return {
            "job_id": job_id,
            "result": self.to_wire(),
            "coverage": self.coverage_fraction,
            "wall_time": self.wall_time,
        }


def passed(coverage: float | None = None, wall_time: float = 0.0) -> RunnerVerdict:
    return RunnerVerdict(status=PASS, coverage_fraction=coverage, wall_time=wall_time)


def failed(failures: dict[str, str], coverage: float | None = None, wall_time: float = 0.0) -> RunnerVerdict:
    return RunnerVerdict(status=FAIL, failures=failures, coverage_fraction=coverage, wall_time=wall_time)


def errored(kind: str, detail: str = "", wall_time: float = 0.0) -> RunnerVerdict:
    return RunnerVerdict(status=ERROR, error_kind=kind, error_detail=detail, wall_time=wall_time)
