"""Parent side of one job: scratch directory, child lifecycle, timeout kill.

The child gets a curated environment whose HOME and temp directories all
point into the scratch directory, runs in its own session (so a timeout can
kill the whole process group), and reports its verdict over a dedicated
pipe, keeping the payload channel clear of anything the job prints. The
scratch directory is destroyed afterwards no matter how the job ended.
"""

from __future__ import annotations

import json
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time

from . import protocol

STDERR_TAIL = 500


def _child_env(workdir: str, result_fd: int) -> dict[str, str]:
    env = {
        "HOME": workdir,
        "TMPDIR": workdir,
        "TEMP": workdir,
        "TMP": workdir,
        "PYTHONDONTWRITEBYTECODE": "1",
        "PYTHONHASHSEED": "0",
        "PYTHONIOENCODING": "utf-8",
        "TESTCELL_RESULT_FD": str(result_fd),
    }
    for key in ("PATH", "LANG", "LC_ALL", "PYTHONPATH", "VIRTUAL_ENV"):
        value = os.environ.get(key)
        if value:
            env[key] = value
    return env


def run_job(job: protocol.RunnerJob) -> protocol.RunnerVerdict:
    """Execute one job in a fresh child process and scratch directory."""
    workdir = tempfile.mkdtemp(prefix="testcell-")
    read_fd, write_fd = os.pipe()
    started = time.monotonic()
    try:
        process = subprocess.Popen(
            [sys.executable, "-m", "testcell.child"],
            stdin=subprocess.PIPE,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.PIPE,
            cwd=workdir,
            env=_child_env(workdir, write_fd),
            pass_fds=(write_fd,),
            start_new_session=True,
        )
        os.close(write_fd)
        write_fd = -1
        # Drain the result pipe concurrently so a payload larger than the
        # pipe buffer cannot deadlock the child against communicate().
        chunks: list[bytes] = []
        reader = threading.Thread(target=_drain_into, args=(read_fd, chunks), daemon=True)
        reader.start()
        try:
            _, stderr = process.communicate(
                input=json.dumps(job.to_record()).encode("utf-8"),
                timeout=job.timeout_seconds,
            )
        except subprocess.TimeoutExpired:
            _kill_group(process)
            process.communicate()
            wall = time.monotonic() - started
            return protocol.errored(
                protocol.KIND_TIMEOUT,
                f"job exceeded {job.timeout_seconds}s wall clock",
                wall_time=wall,
            )
        wall = time.monotonic() - started
        reader.join(timeout=5.0)
        payload = _parse_payload(b"".join(chunks))
        if payload is None:
            detail = (stderr or b"").decode("utf-8", "replace").strip()[-STDERR_TAIL:]
            return protocol.errored(
                protocol.KIND_CRASH,
                f"worker child exited {process.returncode} without a verdict: {detail}",
                wall_time=wall,
            )
        return _verdict_from_payload(payload, wall)
    finally:
        if write_fd >= 0:
            os.close(write_fd)
        os.close(read_fd)
        shutil.rmtree(workdir, ignore_errors=True)


def _kill_group(process: subprocess.Popen) -> None:
    try:
        os.killpg(process.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        process.kill()


def _drain_into(read_fd: int, chunks: list[bytes]) -> None:
    while True:
        try:
            chunk = os.read(read_fd, 65536)
        except OSError:
            return
        if not chunk:
            return
        chunks.append(chunk)


def _parse_payload(raw: bytes) -> dict | None:
    if not raw:
        return None
    try:
        return json.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError):
        return None


def _verdict_from_payload(payload: dict, wall: float) -> protocol.RunnerVerdict:
    try:
        status, body = payload["result"]
        coverage = payload.get("coverage")
        if status == protocol.PASS:
            return protocol.passed(coverage=coverage, wall_time=wall)
        if status == protocol.FAIL:
            return protocol.failed(dict(body), coverage=coverage, wall_time=wall)
        return protocol.RunnerVerdict(
            status=protocol.ERROR,
            error_kind=body.get("kind") or protocol.KIND_CRASH,
            error_detail=body.get("detail", ""),
            coverage_fraction=coverage,
            wall_time=wall,
        )
    except (KeyError, TypeError, ValueError):
        return protocol.errored(protocol.KIND_CRASH, f"malformed child payload: {payload!r}", wall_time=wall)


def measure_coverage(job: protocol.RunnerJob) -> float | None:
    """Coverage fraction for a coverage-enabled job, None if unmeasurable."""
    verdict = run_job(job)
    return verdict.coverage_fraction
