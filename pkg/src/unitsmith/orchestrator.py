"""Dispatch (function, test) jobs to sandbox workers and collect verdicts.

The orchestrator is the concurrency hub: it fans jobs out to a bounded pool,
enforces a supervisor timeout above the runner's own, applies the flake-retry
policy, and guarantees exactly one result per job no matter how workers fail.
Two executors satisfy the same contract: a subprocess executor speaking the
sandbox wire protocol, and an in-process stub scripted with verdict queues so
the rest of the pipeline is testable with no sandbox built.
"""

from __future__ import annotations

import json
import os
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from . import verdicts
from .verdicts import ExecutionResult, Verdict

DEFAULT_TIMEOUT_SECONDS = 30.0
SUPERVISOR_GRACE_SECONDS = 5.0


@dataclass(frozen=True)
class ExecutionPolicy:
    timeout_seconds: float = DEFAULT_TIMEOUT_SECONDS
    flake_retries: int = 1
    parallelism: int = os.cpu_count() or 1
    measure_coverage: bool = False

    def __post_init__(self) -> None:
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be > 0")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.flake_retries < 0:
            raise ValueError("flake_retries must be >= 0")


@dataclass(frozen=True)
class Job:
    candidate_id: str
    function_source: str
    test_source: str
    round: int = 0


class Executor(Protocol):
    def run(self, job: Job, timeout_seconds: float, measure_coverage: bool) -> Verdict: ...


def _job_function_name(source: str) -> str:
    """Name of the first top-level function in a job's source, for scripts
    keyed by name instead of candidate id."""
    import ast

    try:
        tree = ast.parse(source)
    except (SyntaxError, ValueError):
        return ""
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            return node.name
    return ""


class StubExecutor:
    """Scripted executor: verdict lookup keyed by (candidate, round).

    A candidate's schedule is usually a plain list, one verdict per round:
    ``{"fix_me": [fail, pass]}`` fails at round 0 and passes at round 1. The
    nested form ``{"flaky": {0: [fail, pass]}}`` scripts successive attempts
    within one round (flake retries). The last attempt verdict repeats once
    exhausted, so re-verification replays of a settled round are stable.
    Candidates may be keyed by id or by the job function's name; a missing
    entry raises unless a default is set, because silent fallbacks hide
    scripting mistakes.
    """

    def __init__(self, script: dict | None = None, default: Verdict | None = None):
        self._rounds: dict[tuple[str, int], list[Verdict]] = {}
        self._cursor: dict[tuple[str, int], int] = {}
        for candidate, schedule in (script or {}).items():
            if isinstance(schedule, dict):
                for round_no, attempts in schedule.items():
                    self._rounds[(candidate, int(round_no))] = list(attempts)
            else:
                for round_no, verdict in enumerate(schedule):
                    self._rounds[(candidate, round_no)] = [verdict]
        self._default = default
        self._lock = threading.Lock()
        self.dispatches: list[tuple[str, int]] = []

    @classmethod
    def from_script(cls, path: str | Path, default: Verdict | None = None) -> "StubExecutor":
        script: dict[str, dict[int, list[Verdict]]] = {}
        with Path(path).open("r", encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                entry = json.loads(line)
                verdicts_list = [Verdict.from_record(r) for r in entry["verdicts"]]
                schedule = script.setdefault(entry["candidate"], {})
                if "round" in entry:
                    schedule[int(entry["round"])] = verdicts_list
                else:
                    for round_no, verdict in enumerate(verdicts_list):
                        schedule[round_no] = [verdict]
        return cls(script, default=default)

    def run(self, job: Job, timeout_seconds: float, measure_coverage: bool) -> Verdict:
        with self._lock:
            self.dispatches.append((job.candidate_id, job.round))
            for name in (job.candidate_id, _job_function_name(job.function_source)):
                key = (name, job.round)
                attempts = self._rounds.get(key)
                if attempts:
                    index = min(self._cursor.get(key, 0), len(attempts) - 1)
                    self._cursor[key] = index + 1
                    return attempts[index]
            if self._default is not None:
                return self._default
            raise KeyError(
                f"no scripted verdict for candidate {job.candidate_id!r} at round {job.round}"
            )


class SubprocessExecutor:
    """Runs each job in a fresh worker process over the sandbox wire protocol.

    The worker receives one JSON job object on stdin and must emit one JSON
    result object on stdout. A worker unresponsive past timeout + grace is
    killed and reported as a timeout; a worker that exits without a parseable
    result object is reported as a crash.
    """

    def __init__(self, worker_command: Sequence[str], grace_seconds: float = SUPERVISOR_GRACE_SECONDS):
        if not worker_command:
            raise ValueError("worker_command must be a non-empty command line")
        self.worker_command = list(worker_command)
        self.grace_seconds = grace_seconds

    def run(self, job: Job, timeout_seconds: float, measure_coverage: bool) -> Verdict:
        payload = json.dumps(
            {
                "job_id": job.candidate_id,
                "function_source": job.function_source,
                "test_source": job.test_source,
                "timeout_seconds": timeout_seconds,
                "measure_coverage": measure_coverage,
            }
        )
        try:
            completed = subprocess.run(
                self.worker_command,
                input=payload,
                capture_output=True,
                text=True,
                timeout=timeout_seconds + self.grace_seconds,
            )
        except subprocess.TimeoutExpired:
            return verdicts.erroring(
                verdicts.ERROR_TIMEOUT,
                f"worker unresponsive past {timeout_seconds}s + {self.grace_seconds}s grace",
                wall_time=timeout_seconds + self.grace_seconds,
            )
        except OSError as exc:
            return verdicts.erroring(verdicts.ERROR_CRASH, f"failed to spawn worker: {exc}")
        return self._parse_output(completed)

    def _parse_output(self, completed: subprocess.CompletedProcess) -> Verdict:
        try:
            response = json.loads(completed.stdout)
            wire = response["result"]
        except (json.JSONDecodeError, KeyError, TypeError):
            detail = (completed.stderr or completed.stdout or "").strip()[-500:]
            return verdicts.erroring(
                verdicts.ERROR_CRASH,
                f"worker exited {completed.returncode} without a result object: {detail}",
            )
        try:
            return Verdict.from_wire(
                wire,
                coverage=response.get("coverage"),
                wall_time=float(response.get("wall_time", 0.0)),
            )
        except ValueError as exc:
            return verdicts.erroring(verdicts.ERROR_CRASH, f"malformed worker result: {exc}")


class Orchestrator:
    def __init__(self, executor: Executor, policy: ExecutionPolicy = ExecutionPolicy()):
        self.executor = executor
        self.policy = policy

    def execute(
        self,
        candidate_id: str,
        function_source: str,
        test_source: str,
        round: int = 0,
        policy: ExecutionPolicy | None = None,
    ) -> ExecutionResult:
        """Run one pair, re-running failures up to policy.flake_retries times;
        the pair passes iff any attempt passes."""
        policy = policy or self.policy
        job = Job(candidate_id, function_source, test_source, round=round)
        attempts = 0
        verdict: Verdict | None = None
        while True:
            attempts += 1
            verdict = self._run_safely(job, policy)
            if verdict.passed or verdict.status == verdicts.ERROR:
                break
            if attempts > policy.flake_retries:
                break
        return ExecutionResult(candidate_id=candidate_id, round=round, verdict=verdict, attempt=attempts)

    def _run_safely(self, job: Job, policy: ExecutionPolicy) -> Verdict:
        try:
            return self.executor.run(job, policy.timeout_seconds, policy.measure_coverage)
        except Exception as exc:
            return verdicts.erroring(verdicts.ERROR_CRASH, f"executor failure: {exc}")

    def execute_batch(
        self,
        jobs: Iterable[tuple[str, str, str]],
        round: int = 0,
        parallelism: int | None = None,
    ) -> list[ExecutionResult]:
        """Execute (candidate_id, function_source, test_source) triples.

        Exactly one result per job; per-job errors are embedded as error
        verdicts and never abort the batch. Results come back in input
        order, so the outcome is independent of scheduling.
        """
        jobs = list(jobs)
        if not jobs:
            return []
        workers = parallelism if parallelism is not None else self.policy.parallelism
        workers = max(1, min(workers, len(jobs)))
        if workers == 1:
            return [self.execute(cid, fn, test, round=round) for cid, fn, test in jobs]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(self.execute, cid, fn, test, round) for cid, fn, test in jobs]
            return [future.result() for future in futures]


def write_execution_log(results: Iterable[ExecutionResult], destination: str | Path) -> None:
    with Path(destination).open("a", encoding="utf-8") as handle:
        for result in results:
            handle.write(json.dumps(result.to_record(), sort_keys=True) + "\n")
