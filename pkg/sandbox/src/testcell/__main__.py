"""Worker entrypoint: one JSON job on stdin, one JSON result on stdout.

Exit code 0 whenever a result object was emitted; nonzero only when the
harness itself failed (unreadable or schema-violating job).
"""

from __future__ import annotations

import json
import sys

from . import protocol, runner


def main() -> int:
    raw = sys.stdin.read()
    try:
        job = protocol.RunnerJob.from_record(json.loads(raw))
    except (json.JSONDecodeError, protocol.JobError) as exc:
        print(f"testcell: bad job object: {exc}", file=sys.stderr)
        return 2
    verdict = runner.run_job(job)
    json.dump(verdict.result_object(job.job_id), sys.stdout)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
