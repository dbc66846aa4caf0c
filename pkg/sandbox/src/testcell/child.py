"""Sacrificial process: applies limits and shims, then runs the job's tests.

Spawned by the runner with the job object on stdin and a result pipe fd in
TESTCELL_RESULT_FD. The function and test sources are assembled into one
module compiled from memory under the name ``__test__.py`` (never written to
disk), the ``TestCases`` class is run with unittest, and the verdict is
written to the pipe. Anything that kills this process before the payload is
written surfaces at the runner as a crash.
"""

from __future__ import annotations

import ast
import json
import math
import os
import sys
import unittest

from . import protocol, shims, tracing

ADDRESS_SPACE_LIMIT = 4 * 1024**3
FILE_SIZE_LIMIT = 64 * 1024**2
OPEN_FILES_LIMIT = 256
CPU_GRACE_SECONDS = 5


def _apply_limits(timeout_seconds: float) -> None:
    import resource

    cpu = int(math.ceil(timeout_seconds)) + CPU_GRACE_SECONDS
    for limit, value in (
        (resource.RLIMIT_CPU, cpu),
        (resource.RLIMIT_AS, ADDRESS_SPACE_LIMIT),
        (resource.RLIMIT_FSIZE, FILE_SIZE_LIMIT),
        (resource.RLIMIT_NOFILE, OPEN_FILES_LIMIT),
    ):
        try:
            resource.setrlimit(limit, (value, value))
        except (ValueError, OSError):
            pass  # a stricter outer limit already applies


def _target_function_name(function_source: str) -> str | None:
    try:
        tree = ast.parse(function_source)
    except (SyntaxError, ValueError):
        return None
    names = [n.name for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
    return names[-1] if names else None


def _method_name(test) -> str:
    return getattr(test, "_testMethodName", str(test))


TRACEBACK_CAP = 10_000


def _trim(traceback_text: str) -> str:
    """Bound pathological tracebacks, keeping the header and the final
    assertion message."""
    if len(traceback_text) <= TRACEBACK_CAP:
        return traceback_text
    return (
        traceback_text[:2_000]
        + "\n... [traceback truncated] ...\n"
        + traceback_text[-(TRACEBACK_CAP - 2_000):]
    )


def run(job: protocol.RunnerJob) -> protocol.RunnerVerdict:
    module_source = job.function_source + "\n\n" + job.test_source + "\n"
    try:
        code = compile(module_source, tracing.MODULE_FILENAME, "exec")
    except (SyntaxError, ValueError) as exc:
        return protocol.errored(protocol.KIND_COLLECTION, f"module does not compile: {exc}")

    target_name = _target_function_name(job.function_source)
    namespace: dict = {"__name__": "__test__"}
    try:
        exec(code, namespace)
    except ImportError as exc:
        return protocol.errored(protocol.KIND_IMPORT_MISSING, str(exc))
    except (Exception, SystemExit) as exc:
        return protocol.errored(protocol.KIND_COLLECTION, f"module execution failed: {exc!r}")

    test_class = namespace.get("TestCases")
    if not (isinstance(test_class, type) and issubclass(test_class, unittest.TestCase)):
        return protocol.errored(
            protocol.KIND_COLLECTION, "no unittest.TestCase class named TestCases"
        )
    try:
        suite = unittest.TestLoader().loadTestsFromTestCase(test_class)
    except Exception as exc:
        return protocol.errored(protocol.KIND_COLLECTION, f"test collection failed: {exc!r}")
    if suite.countTestCases() == 0:
        return protocol.errored(protocol.KIND_COLLECTION, "TestCases defines no tests")

    result = unittest.TestResult()
    result.buffer = True  # swallow test stdout/stderr
    coverage = None
    if job.measure_coverage and target_name is not None and callable(namespace.get(target_name)):
        with tracing.LineTracer() as tracer:
            suite.run(result)
        try:
            coverage = tracer.fraction_for(namespace[target_name])
        except Exception:
            coverage = None
    else:
        suite.run(result)

    failures = {}
    for test, traceback_text in list(result.failures) + list(result.errors):
        failures[_method_name(test)] = _trim(traceback_text)
    if failures:
        return protocol.failed(failures, coverage=coverage)
    return protocol.passed(coverage=coverage)


def main() -> int:
    raw = sys.stdin.read()
    job = protocol.RunnerJob.from_record(json.loads(raw))
    result_fd = int(os.environ["TESTCELL_RESULT_FD"])

    _apply_limits(job.timeout_seconds)
    shims.install(os.getcwd())

    verdict = run(job)

    payload = json.dumps({"result": verdict.to_wire(), "coverage": verdict.coverage_fraction})
    os.write(result_fd, payload.encode("utf-8"))
    os.close(result_fd)
    return 0


if __name__ == "__main__":
    sys.exit(main())
