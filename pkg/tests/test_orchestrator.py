from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

from unitsmith import verdicts
from unitsmith.orchestrator import (
    ExecutionPolicy,
    Job,
    Orchestrator,
    StubExecutor,
    SubprocessExecutor,
)
from unitsmith.verdicts import ExecutionResult, Verdict


# ── Wire form ──────────────────────────────────────────────────────────


def test_pass_wire_form_is_exact() -> None:
    assert verdicts.passing().to_wire_text() == '["pass", {}]'


def test_fail_wire_form_maps_names_to_tracebacks() -> None:
    failures = {"test_x": "Traceback (most recent call last):\n...\nAssertionError: nope\n"}
    wire = verdicts.failing(failures).to_wire_text()
    decoded = json.loads(wire)
    assert decoded[0] == "fail"
    assert decoded[1] == failures


def test_error_wire_form_round_trips() -> None:
    verdict = verdicts.erroring("timeout", "killed after 2s", wall_time=2.0)
    again = Verdict.from_wire(json.loads(verdict.to_wire_text()), wall_time=2.0)
    assert again.status == "error"
    assert again.error_kind == "timeout"


def test_verdict_invariants_enforced() -> None:
    with pytest.raises(ValueError):
        Verdict(status="pass", failures={"t": "boom"})
    with pytest.raises(ValueError):
        Verdict(status="fail")
    with pytest.raises(ValueError):
        Verdict(status="error")


def test_execution_result_record_round_trip() -> None:
    result = ExecutionResult("cand", 2, verdicts.failing({"t": "tb"}), attempt=2)
    assert ExecutionResult.from_record(result.to_record()) == result


# ── Stub executor + retry policy ───────────────────────────────────────


def _orc(script: dict[str, list[Verdict]], **policy_kwargs) -> Orchestrator:
    policy = ExecutionPolicy(**{"timeout_seconds": 5, "flake_retries": 1, "parallelism": 1, **policy_kwargs})
    return Orchestrator(StubExecutor(script), policy)


def test_passing_pair_single_attempt() -> None:
    orc = _orc({"c1": [verdicts.passing()]})
    result = orc.execute("c1", "def f(): pass", "class TestCases: ...")
    assert result.verdict.passed
    assert result.attempt == 1


def test_deterministic_failure_retried_once() -> None:
    fail = verdicts.failing({"test_a": "tb"})
    orc = _orc({"c1": {0: [fail, fail]}})
    result = orc.execute("c1", "src", "test")
    assert result.verdict.status == "fail"
    assert result.attempt == 2


def test_flaky_pair_passes_on_second_attempt() -> None:
    orc = _orc({"c1": {0: [verdicts.failing({"test_a": "tb"}), verdicts.passing()]}})
    result = orc.execute("c1", "src", "test")
    assert result.verdict.passed
    assert result.attempt == 2


def test_errors_are_not_retried() -> None:
    orc = _orc({"c1": [verdicts.erroring("import_missing", "no mod")]})
    result = orc.execute("c1", "src", "test")
    assert result.verdict.error_kind == "import_missing"
    assert result.attempt == 1


def test_zero_flake_retries() -> None:
    orc = _orc({"c1": [verdicts.failing({"t": "tb"})]}, flake_retries=0)
    assert orc.execute("c1", "src", "test").attempt == 1


def test_stub_matches_on_function_name() -> None:
    orc = _orc({"my_fn": [verdicts.passing()]})
    result = orc.execute("0123abcd", "def my_fn(): pass", "test")
    assert result.verdict.passed


def test_executor_exception_becomes_crash_result() -> None:
    orc = _orc({})  # empty script: stub raises KeyError
    result = orc.execute("ghost", "src", "test")
    assert result.verdict.status == "error"
    assert result.verdict.error_kind == "crash"


# ── Batches ────────────────────────────────────────────────────────────


def _batch_jobs() -> list[tuple[str, str, str]]:
    return [(f"c{i}", f"def f{i}(): pass", "test") for i in range(3)]


def test_batch_results_independent_of_parallelism() -> None:
    script = {
        "c0": [verdicts.passing()],
        "c1": {0: [verdicts.failing({"t": "tb"}), verdicts.failing({"t": "tb"})]},
        "c2": [verdicts.erroring("timeout", "slow")],
    }
    serial = Orchestrator(StubExecutor(script), ExecutionPolicy(timeout_seconds=5, parallelism=1))
    wide = Orchestrator(StubExecutor(script), ExecutionPolicy(timeout_seconds=5, parallelism=3))
    a = serial.execute_batch(_batch_jobs())
    b = wide.execute_batch(_batch_jobs())
    assert sorted(r.to_record()["candidate_id"] for r in a) == sorted(
        r.to_record()["candidate_id"] for r in b
    )
    assert {r.candidate_id: r.verdict.status for r in a} == {
        r.candidate_id: r.verdict.status for r in b
    }


def test_batch_empty() -> None:
    orc = _orc({})
    assert orc.execute_batch([]) == []


def test_batch_mixed_pass_and_timeout() -> None:
    script = {"ok": [verdicts.passing()], "slow": [verdicts.erroring("timeout", "2s")]}
    orc = Orchestrator(StubExecutor(script), ExecutionPolicy(timeout_seconds=5, parallelism=2))
    results = orc.execute_batch([("ok", "s", "t"), ("slow", "s", "t")])
    by_id = {r.candidate_id: r for r in results}
    assert by_id["ok"].verdict.passed
    assert by_id["slow"].verdict.error_kind == "timeout"


def test_batch_never_loses_jobs_on_crashes() -> None:
    orc = _orc({})  # every job crashes via missing script
    jobs = _batch_jobs()
    results = orc.execute_batch(jobs, parallelism=3)
    assert len(results) == len(jobs)
    assert [r.candidate_id for r in results] == [cid for cid, _, _ in jobs]


# ── Subprocess executor against a scripted worker ──────────────────────


FAKE_WORKER = r"""
import json, sys, time
job = json.loads(sys.stdin.read())
mode = job["test_source"]
if mode == "hang":
    time.sleep(60)
elif mode == "garbage":
    print("not json at all")
elif mode == "die":
    sys.exit(3)
else:
    out = {"job_id": job["job_id"], "result": json.loads(mode), "coverage": None, "wall_time": 0.01}
    print(json.dumps(out))
"""


def _fake_worker_cmd(tmp_path: Path) -> list[str]:
    script = tmp_path / "fake_worker.py"
    script.write_text(FAKE_WORKER)
    return [sys.executable, str(script)]


def test_subprocess_executor_parses_pass(tmp_path: Path) -> None:
    executor = SubprocessExecutor(_fake_worker_cmd(tmp_path))
    verdict = executor.run(Job("j1", "src", '["pass", {}]'), timeout_seconds=10, measure_coverage=False)
    assert verdict.passed
    assert verdict.wall_time == 0.01


def test_subprocess_executor_parses_fail(tmp_path: Path) -> None:
    executor = SubprocessExecutor(_fake_worker_cmd(tmp_path))
    wire = json.dumps(["fail", {"test_a": "tb"}])
    verdict = executor.run(Job("j1", "src", wire), timeout_seconds=10, measure_coverage=False)
    assert verdict.status == "fail"
    assert verdict.failures == {"test_a": "tb"}


def test_subprocess_executor_supervisor_timeout(tmp_path: Path) -> None:
    executor = SubprocessExecutor(_fake_worker_cmd(tmp_path), grace_seconds=0.5)
    verdict = executor.run(Job("j1", "src", "hang"), timeout_seconds=0.5, measure_coverage=False)
    assert verdict.error_kind == "timeout"


def test_subprocess_executor_crash_on_garbage_output(tmp_path: Path) -> None:
    executor = SubprocessExecutor(_fake_worker_cmd(tmp_path))
    verdict = executor.run(Job("j1", "src", "garbage"), timeout_seconds=10, measure_coverage=False)
    assert verdict.error_kind == "crash"


def test_subprocess_executor_crash_on_silent_exit(tmp_path: Path) -> None:
    executor = SubprocessExecutor(_fake_worker_cmd(tmp_path))
    verdict = executor.run(Job("j1", "src", "die"), timeout_seconds=10, measure_coverage=False)
    assert verdict.error_kind == "crash"
    assert "exited 3" in (verdict.error_detail or "")
