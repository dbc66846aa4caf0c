"""Evaluate a test generator against canonical solutions.

For each item the generator produces a suite, the canonical solution is
executed against it with line coverage on, and the report aggregates the
fraction of solutions that pass (accuracy) and the mean coverage over items
where coverage was measurable. Canonical solutions are never edited and the
bug-fix agent is never involved. Items whose solution cannot execute in the
pinned environment (missing package) are listed separately and removed from
the accuracy denominator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from . import gateway as gw
from . import verdicts
from .gateway import Gateway
from .orchestrator import Orchestrator

ITEM_PASS = "pass"
ITEM_FAIL = "fail"
ITEM_SUITE_REJECTED = "suite_rejected"
ITEM_PROVIDER_ERROR = "provider_error"
ITEM_ENV_EXCLUDED = "environment_excluded"

COVERAGE_GRANULARITY = "line"


@dataclass(frozen=True)
class EvalItem:
    item_id: str
    canonical_solution: str
    imports: tuple[str, ...] = ()

    @property
    def source(self) -> str:
        if self.imports:
            return "\n".join(self.imports) + "\n\n" + self.canonical_solution
        return self.canonical_solution

    @classmethod
    def from_record(cls, record: dict) -> "EvalItem":
        return cls(
            item_id=str(record["id"]),
            canonical_solution=record["solution"],
            imports=tuple(record.get("imports") or ()),
        )


@dataclass
class EvalReport:
    accuracy: float | None
    mean_coverage: float | None
    item_count: int
    evaluated_count: int
    passed_count: int
    environment_excluded: list[str] = field(default_factory=list)
    per_item: list[dict] = field(default_factory=list)
    coverage_granularity: str = COVERAGE_GRANULARITY

    @property
    def no_data(self) -> bool:
        return self.evaluated_count == 0

    def to_record(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mean_coverage": self.mean_coverage,
            "item_count": self.item_count,
            "evaluated_count": self.evaluated_count,
            "passed_count": self.passed_count,
            "environment_excluded": list(self.environment_excluded),
            "per_item": list(self.per_item),
            "coverage_granularity": self.coverage_granularity,
            "no_data": self.no_data,
        }


def evaluate_generator(items: Sequence[EvalItem], gateway: Gateway, orchestrator: Orchestrator) -> EvalReport:
    """Generate, execute, and score one suite per item; never aborts on one
    item's failure. Suite rejections count as failures, not exclusions."""
    per_item: list[dict] = []
    excluded: list[str] = []
    passed = 0
    coverages: list[float] = []

    for item in items:
        status, coverage = _evaluate_item(item, gateway, orchestrator)
        if status == ITEM_ENV_EXCLUDED:
            excluded.append(item.item_id)
        elif status == ITEM_PASS:
            passed += 1
        if coverage is not None:
            coverages.append(coverage)
        per_item.append({"item_id": item.item_id, "status": status, "coverage": coverage})

    evaluated = len(items) - len(excluded)
    return EvalReport(
        accuracy=(passed / evaluated) if evaluated else None,
        mean_coverage=(sum(coverages) / len(coverages)) if coverages else None,
        item_count=len(items),
        evaluated_count=evaluated,
        passed_count=passed,
        environment_excluded=excluded,
        per_item=per_item,
    )


def _evaluate_item(item: EvalItem, gateway: Gateway, orchestrator: Orchestrator) -> tuple[str, float | None]:
    try:
        suite = gateway.request_code(
            gw.TEST_GENERATOR,
            {"function": item.source},
            validate=lambda src, iid=item.item_id: gw.validate_test_suite(src, iid),
            candidate_id=item.item_id,
            round=0,
        )
    except (gw.SuiteRejectedError, gw.EmptyResponseError, SyntaxError):
        return ITEM_SUITE_REJECTED, None
    except gw.MockScriptMissError:
        raise
    except gw.BudgetExceededError:
        raise
    except gw.ProviderError:
        return ITEM_PROVIDER_ERROR, None

    policy = replace(orchestrator.policy, measure_coverage=True)
    result = orchestrator.execute(item.item_id, item.source, suite.source, policy=policy)
    verdict = result.verdict
    if verdict.error_kind == verdicts.ERROR_IMPORT_MISSING:
        return ITEM_ENV_EXCLUDED, None
    if verdict.passed:
        return ITEM_PASS, verdict.coverage
    return ITEM_FAIL, verdict.coverage


def read_items(source: str | Path) -> list[EvalItem]:
    """Item input: line-delimited JSON objects {id, imports, solution}."""
    items = []
    with Path(source).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                items.append(EvalItem.from_record(json.loads(line)))
    return items


def write_report(report: EvalReport, destination: str | Path) -> None:
    Path(destination).write_text(
        json.dumps(report.to_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def evaluate_items_file(items: Iterable[EvalItem], gateway: Gateway, orchestrator: Orchestrator,
                        destination: str | Path) -> EvalReport:
    report = evaluate_generator(list(items), gateway, orchestrator)
    write_report(report, destination)
    return report
