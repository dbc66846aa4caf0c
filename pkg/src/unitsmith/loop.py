"""Two-phase improvement loop.

Phase 1 admits each function unit, generates and validates a test suite for
it, executes the pair, and partitions candidates into passed / pending /
skipped sets. Phase 2 repeatedly sends each pending candidate's latest source,
its suite, and the serialized execution result to the bug-fix agent,
re-executes the revision against the same suite, and promotes passes. The
suite is generated exactly once and never edited afterwards: tests judge
repairs, not the other way round.

``max_round`` counts repair rounds after initialization, so a candidate's
history holds at most max_round + 1 entries (round 0 plus one per repair).
A checkpoint is written after initialization and after every repair round;
resuming from any checkpoint under the mock provider reproduces the
uninterrupted run bit for bit.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from . import gateway as gw
from . import verdicts
from .extract import FunctionUnit
from .gateway import Gateway, UnitTestSuite
from .orchestrator import Orchestrator
from .verdicts import ExecutionResult

STATUS_PENDING = "pending"
STATUS_PASSED = "passed"
STATUS_EXHAUSTED = "exhausted"
STATUS_SKIPPED = "skipped"

SKIP_SUITE_REJECTED = "suite_rejected"
SKIP_IMPORT_MISSING = "import_missing"
SKIP_PROVIDER_ERROR = "provider_error"

DEFAULT_MAX_ROUND = 3


class InvariantViolation(RuntimeError):
    """A partition bookkeeping invariant was broken; always a bug."""


@dataclass
class Candidate:
    """The evolving (source, suite, results) triple for one admitted unit."""

    candidate_id: str
    unit: FunctionUnit
    current_source: str
    suite: UnitTestSuite | None = None
    round: int = 0
    history: list[tuple[int, str, ExecutionResult]] = field(default_factory=list)
    status: str = STATUS_PENDING
    skip_reason: str | None = None

    @property
    def last_result(self) -> ExecutionResult | None:
        return self.history[-1][2] if self.history else None

    def record(self, round: int, source: str, result: ExecutionResult) -> None:
        if self.history and round <= self.history[-1][0]:
            raise InvariantViolation(
                f"history rounds must strictly increase for {self.candidate_id}"
            )
        self.history.append((round, source, result))

    def to_record(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "unit": self.unit.to_record(),
            "current_source": self.current_source,
            "suite": self.suite.to_record() if self.suite else None,
            "round": self.round,
            "history": [
                {"round": r, "source": s, "result": res.to_record()}
                for r, s, res in self.history
            ],
            "status": self.status,
            "skip_reason": self.skip_reason,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Candidate":
        return cls(
            candidate_id=record["candidate_id"],
            unit=FunctionUnit.from_record(record["unit"]),
            current_source=record["current_source"],
            suite=UnitTestSuite.from_record(record["suite"]) if record.get("suite") else None,
            round=record["round"],
            history=[
                (h["round"], h["source"], ExecutionResult.from_record(h["result"]))
                for h in record["history"]
            ],
            status=record["status"],
            skip_reason=record.get("skip_reason"),
        )


@dataclass
class PartitionState:
    d_pass: set[str] = field(default_factory=set)
    d_curr: set[str] = field(default_factory=set)
    d_skipped: set[str] = field(default_factory=set)
    round: int = 0

    def check_conservation(self, admitted: int) -> None:
        sets = (self.d_pass, self.d_curr, self.d_skipped)
        total = sum(len(s) for s in sets)
        union = self.d_pass | self.d_curr | self.d_skipped
        if len(union) != total:
            raise InvariantViolation("partition sets overlap")
        if total != admitted:
            raise InvariantViolation(f"partition covers {total} of {admitted} admitted candidates")

    def to_record(self) -> dict:
        return {
            "d_pass": sorted(self.d_pass),
            "d_curr": sorted(self.d_curr),
            "d_skipped": sorted(self.d_skipped),
            "round": self.round,
        }

    @classmethod
    def from_record(cls, record: dict) -> "PartitionState":
        return cls(
            d_pass=set(record["d_pass"]),
            d_curr=set(record["d_curr"]),
            d_skipped=set(record["d_skipped"]),
            round=record["round"],
        )


def parse_function_source(source: str) -> str:
    """Validator for revised code: must parse as a module. Returns the text."""
    ast.parse(source)
    return source


class ImprovementLoop:
    def __init__(
        self,
        gateway: Gateway,
        orchestrator: Orchestrator,
        max_round: int = DEFAULT_MAX_ROUND,
        checkpoint_dir: str | Path | None = None,
    ):
        if max_round < 0:
            raise ValueError("max_round must be >= 0")
        self.gateway = gateway
        self.orchestrator = orchestrator
        self.max_round = max_round
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.candidates: dict[str, Candidate] = {}
        self.order: list[str] = []
        self.state = PartitionState()
        self.per_round_passes: list[int] = []

    # ── Phase 1 ─────────────────────────────────────────────────────────

    def admit(self, units: Iterable[FunctionUnit]) -> None:
        for unit in units:
            if unit.unit_id in self.candidates:
                continue
            self.candidates[unit.unit_id] = Candidate(
                candidate_id=unit.unit_id, unit=unit, current_source=unit.source
            )
            self.order.append(unit.unit_id)

    def generate_suites(self) -> None:
        """Request one suite per admitted candidate; rejections become skips."""
        for candidate_id in self.order:
            candidate = self.candidates[candidate_id]
            if candidate.suite is not None or candidate.status == STATUS_SKIPPED:
                continue
            try:
                suite = self.gateway.request_code(
                    gw.TEST_GENERATOR,
                    {"function": candidate.current_source},
                    validate=lambda src, cid=candidate_id: gw.validate_test_suite(src, cid),
                    candidate_id=candidate_id,
                    round=0,
                    unit_name=candidate.unit.name,
                )
            except (gw.SuiteRejectedError, gw.EmptyResponseError, SyntaxError) as exc:
                reason = getattr(exc, "reason", "invalid_output")
                self._skip(candidate, f"{SKIP_SUITE_REJECTED}:{reason}")
            except gw.MockScriptMissError:
                raise
            except gw.BudgetExceededError:
                raise
            except gw.ProviderError:
                self._skip(candidate, SKIP_PROVIDER_ERROR)
            else:
                candidate.suite = suite

    def assign_suites(self, suites: Iterable[UnitTestSuite], skips: Iterable[tuple[str, str]] = ()) -> None:
        """Attach pre-generated suites and recorded skips (stage resumption)."""
        for suite in suites:
            self.candidates[suite.candidate_id].suite = suite
        for candidate_id, reason in skips:
            self._skip(self.candidates[candidate_id], reason)

    def execute_initial(self) -> PartitionState:
        """Execute every suited candidate at round 0 and partition the lot."""
        jobs = [
            (cid, self.candidates[cid].current_source, self.candidates[cid].suite.source)
            for cid in self.order
            if self.candidates[cid].suite is not None
        ]
        results = self.orchestrator.execute_batch(jobs, round=0)
        passes = 0
        for result in results:
            candidate = self.candidates[result.candidate_id]
            candidate.record(0, candidate.current_source, result)
            if result.verdict.passed:
                candidate.status = STATUS_PASSED
                self.state.d_pass.add(candidate.candidate_id)
                passes += 1
            elif result.verdict.error_kind == verdicts.ERROR_IMPORT_MISSING:
                candidate.status = STATUS_SKIPPED
                candidate.skip_reason = SKIP_IMPORT_MISSING
                self.state.d_skipped.add(candidate.candidate_id)
            else:
                self.state.d_curr.add(candidate.candidate_id)
        self.state.round = 0
        self.per_round_passes.append(passes)
        self.state.check_conservation(len(self.candidates))
        self.checkpoint()
        return self.state

    def initialize(self, units: Iterable[FunctionUnit]) -> PartitionState:
        self.admit(units)
        self.generate_suites()
        return self.execute_initial()

    def _skip(self, candidate: Candidate, reason: str) -> None:
        candidate.status = STATUS_SKIPPED
        candidate.skip_reason = reason
        self.state.d_skipped.add(candidate.candidate_id)

    # ── Phase 2 ─────────────────────────────────────────────────────────

    def repair_round(self) -> PartitionState:
        """One bounded revision round over every pending candidate."""
        if self.state.round >= self.max_round:
            raise ValueError(f"round {self.state.round} already at max_round {self.max_round}")
        if not self.state.d_curr:
            raise ValueError("repair_round called with no pending candidates")
        round_no = self.state.round + 1
        jobs: list[tuple[str, str, str]] = []
        for candidate_id in sorted(self.state.d_curr):
            candidate = self.candidates[candidate_id]
            last = candidate.last_result
            assert last is not None and candidate.suite is not None
            try:
                revised = self.gateway.request_code(
                    gw.BUG_FIXER,
                    {
                        "function": candidate.current_source,
                        "unit_test": candidate.suite.source,
                        "execution_result": last.verdict.to_wire_text(),
                    },
                    validate=parse_function_source,
                    candidate_id=candidate_id,
                    round=round_no,
                    unit_name=candidate.unit.name,
                )
            except (SyntaxError, gw.EmptyResponseError) as exc:
                self._consume_round(candidate, round_no, verdicts.ERROR_PARSE_FAILURE,
                                    f"revised source failed to parse: {exc}")
            except gw.MockScriptMissError:
                raise
            except gw.BudgetExceededError:
                raise
            except gw.ProviderError as exc:
                self._consume_round(candidate, round_no, verdicts.ERROR_PROVIDER, str(exc))
            else:
                candidate.current_source = revised
                jobs.append((candidate_id, revised, candidate.suite.source))

        results = self.orchestrator.execute_batch(jobs, round=round_no)
        passes = 0
        for result in results:
            candidate = self.candidates[result.candidate_id]
            candidate.record(round_no, candidate.current_source, result)
            candidate.round = round_no
            if result.verdict.passed:
                candidate.status = STATUS_PASSED
                self.state.d_curr.discard(candidate.candidate_id)
                self.state.d_pass.add(candidate.candidate_id)
                passes += 1
        self.state.round = round_no
        self.per_round_passes.append(passes)
        self.state.check_conservation(len(self.candidates))
        self.checkpoint()
        return self.state

    def _consume_round(self, candidate: Candidate, round_no: int, kind: str, detail: str) -> None:
        """Record a synthetic verdict for a round spent without execution."""
        result = ExecutionResult(
            candidate_id=candidate.candidate_id,
            round=round_no,
            verdict=verdicts.erroring(kind, detail),
        )
        candidate.record(round_no, candidate.current_source, result)
        candidate.round = round_no

    def run_to_completion(self, units: Iterable[FunctionUnit], max_round: int | None = None) -> PartitionState:
        if max_round is not None:
            if max_round < 0:
                raise ValueError("max_round must be >= 0")
            self.max_round = max_round
        self.initialize(units)
        return self.finish_rounds()

    def finish_rounds(self) -> PartitionState:
        while self.state.d_curr and self.state.round < self.max_round:
            self.repair_round()
        for candidate_id in self.state.d_curr:
            self.candidates[candidate_id].status = STATUS_EXHAUSTED
        self.checkpoint(final=True)
        return self.state

    # ── Checkpointing ───────────────────────────────────────────────────

    def checkpoint(self, final: bool = False) -> Path | None:
        if self.checkpoint_dir is None:
            return None
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        name = "partition_final.jsonl" if final else f"partition_round_{self.state.round:03d}.jsonl"
        path = self.checkpoint_dir / name
        self.write_state(path)
        return path

    def write_state(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as handle:
            meta = {
                "type": "meta",
                "state": self.state.to_record(),
                "per_round_passes": self.per_round_passes,
                "max_round": self.max_round,
                "order": self.order,
            }
            handle.write(json.dumps(meta, sort_keys=True) + "\n")
            for candidate_id in self.order:
                record = {"type": "candidate"}
                record.update(self.candidates[candidate_id].to_record())
                handle.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def resume(
        cls,
        path: str | Path,
        gateway: Gateway,
        orchestrator: Orchestrator,
        checkpoint_dir: str | Path | None = None,
    ) -> "ImprovementLoop":
        with Path(path).open("r", encoding="utf-8") as handle:
            meta = json.loads(handle.readline())
            if meta.get("type") != "meta":
                raise ValueError(f"not a checkpoint file: {path}")
            loop = cls(gateway, orchestrator, max_round=meta["max_round"], checkpoint_dir=checkpoint_dir)
            loop.state = PartitionState.from_record(meta["state"])
            loop.per_round_passes = list(meta["per_round_passes"])
            loop.order = list(meta["order"])
            for line in handle:
                if not line.strip():
                    continue
                record = json.loads(line)
                candidate = Candidate.from_record(record)
                loop.candidates[candidate.candidate_id] = candidate
        loop.state.check_conservation(len(loop.candidates))
        return loop

    def passed_candidates(self) -> list[Candidate]:
        return [self.candidates[cid] for cid in sorted(self.state.d_pass)]


def latest_checkpoint(directory: str | Path) -> Path | None:
    """The final checkpoint if present, else the highest-round one."""
    directory = Path(directory)
    final = directory / "partition_final.jsonl"
    if final.exists():
        return final
    rounds = sorted(directory.glob("partition_round_*.jsonl"))
    return rounds[-1] if rounds else None
