"""Refinement of passing candidates: docstrings, comments, style.

Every refined function is re-executed against the exact suite that admitted
it before being accepted; refinement that changes behavior, renames the
function, or alters its parameter list is rejected and the candidate keeps
its unrefined passing source. Rejections are tallied so no candidate is
silently lost.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from . import gateway as gw
from .gateway import Gateway
from .loop import Candidate, STATUS_PASSED
from .orchestrator import Orchestrator

REJECT_PROVIDER = "provider"
REJECT_UNPARSEABLE = "unparseable"
REJECT_MISSING_FUNCTION = "missing_function"
REJECT_SIGNATURE = "signature_changed"
REJECT_NO_DOCSTRING = "no_docstring"
REJECT_BEHAVIOR = "behavior_changed"


@dataclass(frozen=True)
class RefinedUnit:
    candidate_id: str
    refined_source: str
    docstring: str
    verified: bool

    def to_record(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "refined_source": self.refined_source,
            "docstring": self.docstring,
            "verified": self.verified,
        }

    @classmethod
    def from_record(cls, record: dict) -> "RefinedUnit":
        return cls(
            candidate_id=record["candidate_id"],
            refined_source=record["refined_source"],
            docstring=record["docstring"],
            verified=record["verified"],
        )


@dataclass(frozen=True)
class Rejection:
    candidate_id: str
    reason: str
    detail: str = ""

    def to_record(self) -> dict:
        return {"candidate_id": self.candidate_id, "reason": self.reason, "detail": self.detail}


class RefinementRejected(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


def _function_def(source: str, name: str) -> ast.FunctionDef | ast.AsyncFunctionDef | None:
    try:
        tree = ast.parse(source)
    except (SyntaxError, ValueError):
        return None
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name == name:
            return node
    return None


def _parameter_names(node: ast.FunctionDef | ast.AsyncFunctionDef) -> list[str]:
    args = node.args
    names = [a.arg for a in args.posonlyargs] + [a.arg for a in args.args]
    if args.vararg:
        names.append("*" + args.vararg.arg)
    names.extend(a.arg for a in args.kwonlyargs)
    if args.kwarg:
        names.append("**" + args.kwarg.arg)
    return names


def check_refinement(original_source: str, refined_source: str, name: str) -> str:
    """Structural gate: same function name and parameter list, docstring
    present. Returns the docstring text."""
    original = _function_def(original_source, name)
    if original is None:
        raise RefinementRejected(REJECT_MISSING_FUNCTION, f"original lacks function {name!r}")
    refined = _function_def(refined_source, name)
    if refined is None:
        raise RefinementRejected(REJECT_SIGNATURE, f"refined output does not define {name!r}")
    if _parameter_names(refined) != _parameter_names(original):
        raise RefinementRejected(
            REJECT_SIGNATURE,
            f"parameters changed: {_parameter_names(original)} -> {_parameter_names(refined)}",
        )
    docstring = ast.get_docstring(refined, clean=False)
    if not docstring:
        raise RefinementRejected(REJECT_NO_DOCSTRING, "refined function has no docstring")
    return docstring


class Refiner:
    def __init__(self, gateway: Gateway, orchestrator: Orchestrator):
        self.gateway = gateway
        self.orchestrator = orchestrator

    def refine(self, candidate: Candidate) -> RefinedUnit:
        """Refine one passing candidate; raises RefinementRejected on any
        failed check, leaving the candidate's passing source untouched."""
        if candidate.status != STATUS_PASSED:
            raise ValueError(f"candidate {candidate.candidate_id} is not passed")
        assert candidate.suite is not None
        try:
            refined_source = self.gateway.request_code(
                gw.REFINER,
                {"function": candidate.current_source, "unit_test": candidate.suite.source},
                validate=_parse_module,
                candidate_id=candidate.candidate_id,
                round=candidate.round,
                unit_name=candidate.unit.name,
            )
        except (SyntaxError, gw.EmptyResponseError) as exc:
            raise RefinementRejected(REJECT_UNPARSEABLE, str(exc)) from exc
        except gw.MockScriptMissError:
            raise
        except gw.BudgetExceededError:
            raise
        except gw.ProviderError as exc:
            raise RefinementRejected(REJECT_PROVIDER, str(exc)) from exc

        docstring = check_refinement(candidate.current_source, refined_source, candidate.unit.name)

        result = self.orchestrator.execute(
            candidate.candidate_id, refined_source, candidate.suite.source, round=candidate.round
        )
        if not result.verdict.passed:
            raise RefinementRejected(REJECT_BEHAVIOR, result.verdict.to_wire_text())
        return RefinedUnit(
            candidate_id=candidate.candidate_id,
            refined_source=refined_source,
            docstring=docstring,
            verified=True,
        )

    def refine_all(
        self,
        candidates: Iterable[Candidate],
        audit_path: str | Path | None = None,
    ) -> tuple[list[RefinedUnit], list[Rejection]]:
        """Refine every passing candidate; |input| = |accepted| + |rejected|."""
        accepted: list[RefinedUnit] = []
        rejected: list[Rejection] = []
        audit = open(audit_path, "a", encoding="utf-8") if audit_path else None
        try:
            for candidate in candidates:
                pre_source = candidate.current_source
                try:
                    unit = self.refine(candidate)
                except RefinementRejected as exc:
                    rejection = Rejection(candidate.candidate_id, exc.reason, exc.detail)
                    rejected.append(rejection)
                    if audit:
                        entry = {"candidate_id": candidate.candidate_id, "decision": "rejected",
                                 "reason": exc.reason, "detail": exc.detail, "pre_source": pre_source}
                        audit.write(json.dumps(entry, sort_keys=True) + "\n")
                else:
                    accepted.append(unit)
                    if audit:
                        entry = {"candidate_id": candidate.candidate_id, "decision": "accepted",
                                 "pre_source": pre_source, "post_source": unit.refined_source}
                        audit.write(json.dumps(entry, sort_keys=True) + "\n")
        finally:
            if audit:
                audit.close()
        return accepted, rejected


def _parse_module(source: str) -> str:
    ast.parse(source)
    return source


def write_refined(units: Iterable[RefinedUnit], destination: str | Path) -> int:
    count = 0
    with Path(destination).open("w", encoding="utf-8") as handle:
        for unit in units:
            handle.write(json.dumps(unit.to_record(), sort_keys=True) + "\n")
            count += 1
    return count


def read_refined(source: str | Path) -> list[RefinedUnit]:
    units = []
    with Path(source).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                units.append(RefinedUnit.from_record(json.loads(line)))
    return units
