"""Provider abstraction for the three agent roles.

One role each for test generation, bug fixing, and refinement. Every role
binds a system prompt (shipped as a template file), a user-message template
with ``{slot}`` placeholders, a provider, and sampling parameters. Providers:
an HTTP chat-completion client with retries and a token-bucket rate limit,
and a deterministic scripted mock for tests and golden runs.
"""

from __future__ import annotations

import ast
import json
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol

from .ids import content_id

TEST_GENERATOR = "test_generator"
BUG_FIXER = "bug_fixer"
REFINER = "refiner"

ROLE_SLOTS = {
    TEST_GENERATOR: ("function",),
    BUG_FIXER: ("function", "unit_test", "execution_result"),
    REFINER: ("function", "unit_test"),
}

TEST_CLASS_NAME = "TestCases"

REJECT_SYNTAX = "syntax_error"
REJECT_CLASS_NAME = "class_name"
REJECT_NO_TESTS = "no_tests"


class GatewayError(Exception):
    pass


class TemplateError(GatewayError):
    """A required slot is missing or the template is malformed."""


class ProviderError(GatewayError):
    """The provider failed after exhausting retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class BudgetExceededError(GatewayError):
    """The configured request budget is spent; the run must halt resumably."""


class MockScriptMissError(GatewayError):
    """The mock provider had no entry for a lookup; always a test failure."""


class EmptyResponseError(GatewayError):
    pass


class SuiteRejectedError(GatewayError):
    """A generated test suite failed structural validation."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.2
    max_tokens: int = 2048
    seed: int | None = None


@dataclass(frozen=True)
class AgentRole:
    role_id: str
    system_prompt: str
    user_template: str
    provider_id: str = "mock"
    model: str = ""
    sampling: SamplingParams = SamplingParams()

    def __post_init__(self) -> None:
        if self.role_id not in ROLE_SLOTS:
            raise ValueError(f"unknown role: {self.role_id!r}")


def _read_template(name: str) -> str:
    return resources.files("unitsmith").joinpath("templates", name).read_text(encoding="utf-8")


def default_role(
    role_id: str,
    provider_id: str = "mock",
    model: str = "",
    sampling: SamplingParams = SamplingParams(),
    template_dir: str | Path | None = None,
) -> AgentRole:
    """Role bound to the shipped templates, or to overrides in template_dir."""
    if template_dir is not None:
        base = Path(template_dir)
        system = (base / f"{role_id}_system.txt").read_text(encoding="utf-8")
        user = (base / f"{role_id}_user.txt").read_text(encoding="utf-8")
    else:
        system = _read_template(f"{role_id}_system.txt")
        user = _read_template(f"{role_id}_user.txt")
    return AgentRole(role_id=role_id, system_prompt=system, user_template=user,
                     provider_id=provider_id, model=model, sampling=sampling)


def render_prompt(role: AgentRole, slots: dict[str, str]) -> str:
    """Substitute the role's required slots into its user template.

    Substitution is literal (slot values may contain braces); a missing
    slot raises a TemplateError naming it.
    """
    required = ROLE_SLOTS[role.role_id]
    for name in required:
        if name not in slots:
            raise TemplateError(f"missing slot {name!r} for role {role.role_id!r}")
    unknown = set(slots) - set(required)
    if unknown:
        raise TemplateError(f"unknown slots for role {role.role_id!r}: {sorted(unknown)}")
    message = role.user_template
    for name in required:
        marker = "{" + name + "}"
        if marker not in message:
            raise TemplateError(f"template for role {role.role_id!r} lacks marker {marker}")
        message = message.replace(marker, slots[name])
    return message


@dataclass(frozen=True)
class CompletionRequest:
    request_id: str
    role_id: str
    system: str
    user: str
    model: str
    sampling: SamplingParams
    candidate_id: str = ""
    round: int = 0
    unit_name: str = ""


@dataclass(frozen=True)
class CompletionResponse:
    request_id: str
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0
    status: str = "ok"


class Provider(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


class TokenBucket:
    """Shared rate limiter: ``rate`` requests per second, burst up to ``burst``."""

    def __init__(self, rate: float, burst: int = 1, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.rate = rate
        self.burst = burst
        self._tokens = float(burst)
        self._stamp = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self._clock()
                self._tokens = min(self.burst, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                self._sleep((1.0 - self._tokens) / self.rate)


# Transport signature: (url, headers, payload, timeout) -> (status_code, body_text).
Transport = Callable[[str, dict, dict, float], tuple[int, str]]


def _requests_transport(url: str, headers: dict, payload: dict, timeout: float) -> tuple[int, str]:
    import requests

    response = requests.post(url, headers=headers, json=payload, timeout=timeout)
    return response.status_code, response.text


class HttpChatProvider:
    """Chat-completion client over an OpenAI-style HTTP endpoint.

    Transient failures (HTTP 429, 5xx, transport errors) are retried with
    exponential backoff up to ``max_retries`` extra attempts; other HTTP
    errors fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        max_retries: int = 4,
        backoff_base: float = 0.5,
        timeout: float = 120.0,
        rate_limit: TokenBucket | None = None,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.rate_limit = rate_limit
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._clock = clock

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        url = f"{self.base_url}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.sampling.temperature,
            "max_tokens": request.sampling.max_tokens,
        }
        if request.sampling.seed is not None:
            payload["seed"] = request.sampling.seed

        last_error = "no attempt made"
        last_status: int | None = None
        for attempt in range(self.max_retries + 1):
            if self.rate_limit is not None:
                self.rate_limit.acquire()
            started = self._clock()
            try:
                status, body = self._transport(url, headers, payload, self.timeout)
            except Exception as exc:
                last_error, last_status = f"transport error: {exc}", None
            else:
                if status == 200:
                    return self._parse_body(request, body, self._clock() - started)
                last_error, last_status = f"HTTP {status}: {body[:200]}", status
                if status not in (429,) and status < 500:
                    raise ProviderError(last_error, status=status)
            if attempt < self.max_retries:
                self._sleep(self.backoff_base * (2**attempt))
        raise ProviderError(f"retries exhausted: {last_error}", status=last_status)

    @staticmethod
    def _parse_body(request: CompletionRequest, body: str, latency: float) -> CompletionResponse:
        try:
            data = json.loads(body)
            text = data["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc
        usage = data.get("usage") or {}
        return CompletionResponse(
            request_id=request.request_id,
            text=text,
            input_tokens=usage.get("prompt_tokens", 0),
            output_tokens=usage.get("completion_tokens", 0),
            latency=latency,
        )


class MockProvider:
    """Deterministic scripted provider.

    The script maps (role, candidate, round) to a response text or a
    scripted provider error. A candidate key matches either the candidate
    id or the unit name, so fixtures can be written before ids are known.
    Unmatched lookups raise; there is no silent fallback.
    """

    def __init__(self, entries: list[dict]):
        self._responses: dict[tuple[str, str, int], dict] = {}
        self.requests: list[CompletionRequest] = []
        for entry in entries:
            key = (entry["role"], entry["candidate"], int(entry.get("round", 0)))
            self._responses[key] = entry

    @classmethod
    def from_script(cls, path: str | Path) -> "MockProvider":
        entries = []
        with Path(path).open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    entries.append(json.loads(line))
        return cls(entries)

    def _lookup(self, request: CompletionRequest) -> dict:
        for candidate_key in (request.candidate_id, request.unit_name):
            entry = self._responses.get((request.role_id, candidate_key, request.round))
            if entry is not None:
                return entry
        raise MockScriptMissError(
            f"no scripted response for role={request.role_id!r} "
            f"candidate={request.candidate_id!r} name={request.unit_name!r} round={request.round}"
        )

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self.requests.append(request)
        entry = self._lookup(request)
        if "error" in entry:
            raise ProviderError(str(entry["error"]))
        return CompletionResponse(
            request_id=request.request_id,
            text=entry["response"],
            output_tokens=len(entry["response"].split()),
        )


@dataclass
class Gateway:
    """Binds roles to providers and enforces the request budget.

    ``request`` performs one completion; ``request_code`` adds code-block
    extraction plus validation with at most one re-request per invocation
    when the provider output is malformed.
    """

    roles: dict[str, AgentRole]
    providers: dict[str, Provider]
    max_requests: int | None = None
    audit_path: str | Path | None = None
    _count: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def request(self, role_id: str, slots: dict[str, str], candidate_id: str = "",
                round: int = 0, unit_name: str = "") -> CompletionResponse:
        role = self.roles[role_id]
        with self._lock:
            if self.max_requests is not None and self._count >= self.max_requests:
                raise BudgetExceededError(
                    f"request budget of {self.max_requests} exhausted"
                )
            self._count += 1
            request_id = f"req-{self._count:06d}"
        request = CompletionRequest(
            request_id=request_id,
            role_id=role_id,
            system=role.system_prompt,
            user=render_prompt(role, slots),
            model=role.model,
            sampling=role.sampling,
            candidate_id=candidate_id,
            round=round,
            unit_name=unit_name,
        )
        response = self.providers[role.provider_id].complete(request)
        self._audit(request, response)
        return response

    def request_code(
        self,
        role_id: str,
        slots: dict[str, str],
        validate: Callable[[str], object],
        candidate_id: str = "",
        round: int = 0,
        unit_name: str = "",
    ):
        """Request, extract the code block, validate; one retry on rejection."""
        last_exc: Exception | None = None
        for _ in range(2):
            response = self.request(role_id, slots, candidate_id, round, unit_name)
            try:
                code = extract_code_block(response.text)
                return validate(code.text)
            except (EmptyResponseError, SuiteRejectedError, SyntaxError) as exc:
                last_exc = exc
        assert last_exc is not None
        raise last_exc

    def _audit(self, request: CompletionRequest, response: CompletionResponse) -> None:
        if self.audit_path is None:
            return
        entry = {
            "request_id": request.request_id,
            "role": request.role_id,
            "candidate_id": request.candidate_id,
            "round": request.round,
            "user": request.user,
            "response": response.text,
            "input_tokens": response.input_tokens,
            "output_tokens": response.output_tokens,
            "latency": response.latency,
        }
        with open(self.audit_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")


@dataclass(frozen=True)
class ExtractedCode:
    text: str
    fenced: bool

    @property
    def low_confidence(self) -> bool:
        return not self.fenced


_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\r?\n(.*?)```", re.DOTALL)


def extract_code_block(response_text: str) -> ExtractedCode:
    """Contents of the first fenced code block, or the full trimmed text
    flagged low-confidence when no fence exists."""
    if not response_text or not response_text.strip():
        raise EmptyResponseError("provider returned an empty response")
    match = _FENCE_RE.search(response_text)
    if match:
        return ExtractedCode(text=match.group(2), fenced=True)
    return ExtractedCode(text=response_text.strip(), fenced=False)


@dataclass(frozen=True)
class UnitTestSuite:
    """A validated test class bound to the candidate it judges."""

    suite_id: str
    candidate_id: str
    source: str
    test_method_names: tuple[str, ...]

    def to_record(self) -> dict:
        return {
            "suite_id": self.suite_id,
            "candidate_id": self.candidate_id,
            "source": self.source,
            "test_method_names": list(self.test_method_names),
        }

    @classmethod
    def from_record(cls, record: dict) -> "UnitTestSuite":
        return cls(
            suite_id=record["suite_id"],
            candidate_id=record["candidate_id"],
            source=record["source"],
            test_method_names=tuple(record["test_method_names"]),
        )


def validate_test_suite(test_source: str, candidate_id: str = "") -> UnitTestSuite:
    """Accept iff the source parses, defines exactly one class named
    TestCases, and that class has at least one test_ method."""
    try:
        tree = ast.parse(test_source)
    except (SyntaxError, ValueError) as exc:
        raise SuiteRejectedError(REJECT_SYNTAX, str(exc)) from exc
    classes = [node for node in tree.body if isinstance(node, ast.ClassDef)]
    named = [cls_node for cls_node in classes if cls_node.name == TEST_CLASS_NAME]
    if len(named) != 1:
        raise SuiteRejectedError(
            REJECT_CLASS_NAME,
            f"expected exactly one class named {TEST_CLASS_NAME}, "
            f"found {[c.name for c in classes]}",
        )
    methods = [
        node.name
        for node in named[0].body
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name.startswith("test_")
    ]
    if not methods:
        raise SuiteRejectedError(REJECT_NO_TESTS, f"{TEST_CLASS_NAME} defines no test_ methods")
    return UnitTestSuite(
        suite_id=content_id(candidate_id, test_source),
        candidate_id=candidate_id,
        source=test_source,
        test_method_names=tuple(methods),
    )
