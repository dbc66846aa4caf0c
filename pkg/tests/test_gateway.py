from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from demo_sources import DRAW_WEIGHTS_SUITE, GET_VAR_REFINED
from unitsmith.gateway import (
    BUG_FIXER,
    BudgetExceededError,
    CompletionRequest,
    EmptyResponseError,
    Gateway,
    HttpChatProvider,
    MockProvider,
    MockScriptMissError,
    ProviderError,
    REFINER,
    SamplingParams,
    SuiteRejectedError,
    TEST_GENERATOR,
    TemplateError,
    TokenBucket,
    default_role,
    extract_code_block,
    render_prompt,
    validate_test_suite,
)

pytest_plugins: list[str] = []


# ── Prompt rendering ───────────────────────────────────────────────────


def test_render_test_generator_embeds_function() -> None:
    role = default_role(TEST_GENERATOR)
    message = render_prompt(role, {"function": "def f(): return 1"})
    assert "def f(): return 1" in message
    assert "{function}" not in message


def test_system_prompt_carries_generator_contract() -> None:
    role = default_role(TEST_GENERATOR)
    assert "Do not modify the class name(TestCases)." in role.system_prompt
    assert "unittest" in role.system_prompt


def test_bug_fixer_missing_slot_names_it() -> None:
    role = default_role(BUG_FIXER)
    with pytest.raises(TemplateError, match="execution_result"):
        render_prompt(role, {"function": "def f(): pass", "unit_test": "class TestCases: ..."})


def test_refiner_embeds_demo_function() -> None:
    role = default_role(REFINER)
    message = render_prompt(role, {"function": GET_VAR_REFINED, "unit_test": "suite text"})
    assert GET_VAR_REFINED in message


def test_render_preserves_braces_in_slot_values() -> None:
    role = default_role(TEST_GENERATOR)
    fn = 'def f(d):\n    return f"{d}" + "{function}"\n'
    message = render_prompt(role, {"function": fn})
    assert fn in message


def test_render_rejects_unknown_slots() -> None:
    role = default_role(TEST_GENERATOR)
    with pytest.raises(TemplateError):
        render_prompt(role, {"function": "x", "bogus": "y"})


@given(st.text(min_size=1, max_size=40), st.text(min_size=1, max_size=40))
def test_render_injective_in_function_slot(a: str, b: str) -> None:
    role = default_role(TEST_GENERATOR)
    ra = render_prompt(role, {"function": a})
    rb = render_prompt(role, {"function": b})
    assert (ra == rb) == (a == b)


# ── Code-block extraction ──────────────────────────────────────────────


def test_extract_plain_fence() -> None:
    assert extract_code_block("```python\nX\n```").text == "X\n"


def test_extract_fence_between_prose() -> None:
    text = "Here you go:\n```python\ndef f():\n    return 1\n```\nHope that helps!"
    code = extract_code_block(text)
    assert code.text == "def f():\n    return 1\n"
    assert code.fenced


def test_extract_first_of_two_fences() -> None:
    text = "```python\nfirst = 1\n```\nmore\n```python\nsecond = 2\n```"
    assert extract_code_block(text).text == "first = 1\n"


def test_extract_without_fence_is_low_confidence() -> None:
    code = extract_code_block("  def f():\n    return 1\n")
    assert code.low_confidence
    assert code.text.startswith("def f()")


def test_extract_empty_response_raises() -> None:
    with pytest.raises(EmptyResponseError):
        extract_code_block("   \n ")


# ── Suite validation ───────────────────────────────────────────────────


def test_validate_demo_suite_accepted_with_five_methods() -> None:
    suite = validate_test_suite(DRAW_WEIGHTS_SUITE, "cand-1")
    assert suite.candidate_id == "cand-1"
    assert len(suite.test_method_names) == 5
    assert set(suite.test_method_names) == {
        "test_lognormal_weights",
        "test_normal_weights",
        "test_uniform_weights",
        "test_invalid_size",
        "test_invalid_distribution",
    }


def test_validate_wrong_class_name_rejected() -> None:
    source = "import unittest\nclass MyTests(unittest.TestCase):\n    def test_a(self):\n        pass\n"
    with pytest.raises(SuiteRejectedError) as excinfo:
        validate_test_suite(source)
    assert excinfo.value.reason == "class_name"


def test_validate_no_test_methods_rejected() -> None:
    source = "import unittest\nclass TestCases(unittest.TestCase):\n    def helper(self):\n        pass\n"
    with pytest.raises(SuiteRejectedError) as excinfo:
        validate_test_suite(source)
    assert excinfo.value.reason == "no_tests"


def test_validate_duplicate_class_rejected() -> None:
    source = (
        "class TestCases:\n    def test_a(self):\n        pass\n"
        "class TestCases:\n    def test_b(self):\n        pass\n"
    )
    with pytest.raises(SuiteRejectedError):
        validate_test_suite(source)


@given(st.text(max_size=60))
def test_validate_never_accepts_unparseable(source: str) -> None:
    try:
        compiles = True
        import ast

        ast.parse(source)
    except (SyntaxError, ValueError):
        compiles = False
    if not compiles:
        with pytest.raises(SuiteRejectedError):
            validate_test_suite(source)


# ── Providers ──────────────────────────────────────────────────────────


def _request(text: str = "hello") -> CompletionRequest:
    return CompletionRequest(
        request_id="req-000001",
        role_id=TEST_GENERATOR,
        system="sys",
        user=text,
        model="test-model",
        sampling=SamplingParams(),
    )


def test_mock_provider_scripted_response(tmp_path: Path) -> None:
    script = tmp_path / "mock.jsonl"
    script.write_text(
        json.dumps({"role": TEST_GENERATOR, "candidate": "c1", "round": 0, "response": "scripted"}) + "\n"
    )
    provider = MockProvider.from_script(script)
    request = CompletionRequest(
        request_id="r", role_id=TEST_GENERATOR, system="s", user="u",
        model="", sampling=SamplingParams(), candidate_id="c1", round=0,
    )
    response = provider.complete(request)
    assert response.text == "scripted"
    assert response.output_tokens == 1


def test_mock_provider_name_fallback_and_miss() -> None:
    provider = MockProvider([{"role": TEST_GENERATOR, "candidate": "my_func", "round": 0, "response": "ok"}])
    by_name = CompletionRequest(
        request_id="r", role_id=TEST_GENERATOR, system="s", user="u", model="",
        sampling=SamplingParams(), candidate_id="deadbeef", round=0, unit_name="my_func",
    )
    assert provider.complete(by_name).text == "ok"
    with pytest.raises(MockScriptMissError):
        provider.complete(_request())


def test_mock_provider_scripted_error() -> None:
    provider = MockProvider([{"role": TEST_GENERATOR, "candidate": "c", "round": 1, "error": "boom"}])
    request = CompletionRequest(
        request_id="r", role_id=TEST_GENERATOR, system="s", user="u", model="",
        sampling=SamplingParams(), candidate_id="c", round=1,
    )
    with pytest.raises(ProviderError):
        provider.complete(request)


def _ok_body(text: str) -> str:
    return json.dumps(
        {"choices": [{"message": {"content": text}}], "usage": {"prompt_tokens": 3, "completion_tokens": 5}}
    )


class ScriptedTransport:
    def __init__(self, outcomes: list[tuple[int, str]]):
        self.outcomes = list(outcomes)
        self.calls = 0

    def __call__(self, url: str, headers: dict, payload: dict, timeout: float) -> tuple[int, str]:
        self.calls += 1
        return self.outcomes.pop(0)


def test_http_provider_retries_on_429_then_succeeds() -> None:
    transport = ScriptedTransport([(429, "slow down"), (429, "slow down"), (200, _ok_body("done"))])
    provider = HttpChatProvider("http://provider.test/v1", transport=transport, sleep=lambda s: None)
    response = provider.complete(_request())
    assert response.text == "done"
    assert transport.calls == 3
    assert response.input_tokens == 3 and response.output_tokens == 5


def test_http_provider_exhausts_retries_on_500s() -> None:
    transport = ScriptedTransport([(500, "err")] * 5)
    provider = HttpChatProvider(
        "http://provider.test/v1", max_retries=4, transport=transport, sleep=lambda s: None
    )
    with pytest.raises(ProviderError) as excinfo:
        provider.complete(_request())
    assert transport.calls == 5
    assert excinfo.value.status == 500


def test_http_provider_client_error_fails_fast() -> None:
    transport = ScriptedTransport([(401, "no auth")])
    provider = HttpChatProvider("http://provider.test/v1", transport=transport, sleep=lambda s: None)
    with pytest.raises(ProviderError):
        provider.complete(_request())
    assert transport.calls == 1


def test_token_bucket_spaces_requests() -> None:
    clock = {"now": 0.0}
    sleeps: list[float] = []

    def fake_sleep(seconds: float) -> None:
        sleeps.append(seconds)
        clock["now"] += seconds

    bucket = TokenBucket(rate=2.0, burst=1, clock=lambda: clock["now"], sleep=fake_sleep)
    bucket.acquire()
    bucket.acquire()
    bucket.acquire()
    assert sleeps == [0.5, 0.5]


# ── Gateway ────────────────────────────────────────────────────────────


def _gateway(entries: list[dict], max_requests: int | None = None, audit: Path | None = None) -> Gateway:
    roles = {role_id: default_role(role_id) for role_id in (TEST_GENERATOR, BUG_FIXER, REFINER)}
    return Gateway(
        roles=roles,
        providers={"mock": MockProvider(entries)},
        max_requests=max_requests,
        audit_path=audit,
    )


def test_gateway_budget_exhaustion() -> None:
    gateway = _gateway(
        [{"role": TEST_GENERATOR, "candidate": "c", "round": 0, "response": "x"}], max_requests=1
    )
    gateway.request(TEST_GENERATOR, {"function": "f"}, candidate_id="c")
    with pytest.raises(BudgetExceededError):
        gateway.request(TEST_GENERATOR, {"function": "f"}, candidate_id="c")


def test_gateway_audit_log_is_deterministic(tmp_path: Path) -> None:
    audit = tmp_path / "audit.jsonl"
    gateway = _gateway(
        [{"role": TEST_GENERATOR, "candidate": "c", "round": 0, "response": "x"}], audit=audit
    )
    gateway.request(TEST_GENERATOR, {"function": "f"}, candidate_id="c")
    entry = json.loads(audit.read_text().splitlines()[0])
    assert entry["request_id"] == "req-000001"
    assert entry["response"] == "x"


def test_request_code_retries_once_then_raises() -> None:
    garbage = {"role": TEST_GENERATOR, "candidate": "c", "round": 0, "response": "```python\nnot ( valid\n```"}
    gateway = _gateway([garbage])
    attempts: list[str] = []

    def validate(source: str) -> str:
        attempts.append(source)
        import ast

        ast.parse(source)
        return source

    with pytest.raises(SyntaxError):
        gateway.request_code(TEST_GENERATOR, {"function": "f"}, validate, candidate_id="c")
    assert len(attempts) == 2
