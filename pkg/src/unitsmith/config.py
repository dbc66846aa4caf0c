"""Pipeline configuration: a single YAML file with a documented schema.

Relative paths are resolved against the config file's directory. Secrets
never live in the file; the provider API key is read from the environment
variable named by ``provider.api_key_env``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import gateway as gw
from .dataset import DEFAULT_BUCKET_EDGES
from .extract import MAX_FUNCTION_CHARS
from .gateway import Gateway, HttpChatProvider, MockProvider, SamplingParams, TokenBucket
from .ingest import DEFAULT_SHINGLE_TOKENS
from .loop import DEFAULT_MAX_ROUND
from .orchestrator import ExecutionPolicy, Orchestrator, StubExecutor, SubprocessExecutor


class ConfigError(ValueError):
    pass


@dataclass
class RoleConfig:
    model: str = ""
    temperature: float = 0.2
    max_tokens: int = 2048
    seed: int | None = None

    def sampling(self) -> SamplingParams:
        return SamplingParams(temperature=self.temperature, max_tokens=self.max_tokens, seed=self.seed)


@dataclass
class PipelineConfig:
    corpus_source: Path | None
    corpus_format: str
    blocklist_dir: Path | None
    shingle_tokens: int
    allowlist: Path | None
    denylist: Path | None
    max_function_chars: int
    provider_kind: str
    base_url: str
    api_key_env: str
    max_retries: int
    requests_per_minute: float | None
    mock_script: Path | None
    max_requests: int | None
    roles: dict[str, RoleConfig]
    template_dir: Path | None
    max_round: int
    executor_kind: str
    worker_command: list[str]
    stub_script: Path | None
    timeout_seconds: float
    flake_retries: int
    parallelism: int
    include_unrefined: bool
    stats_bucket_edges: list[int]
    eval_items: Path | None
    output_dir: Path
    raw: dict = field(default_factory=dict, repr=False)

    def snapshot(self) -> dict:
        """The config as loaded, for embedding in manifests."""
        return self.raw


def _resolve(base: Path, value: Any) -> Path | None:
    if value is None:
        return None
    path = Path(str(value))
    return path if path.is_absolute() else base / path


def _require_exists(path: Path | None, label: str) -> None:
    if path is not None and not path.exists():
        raise ConfigError(f"{label} path does not exist: {path}")


def load_config(path: str | Path, output_dir: str | Path | None = None) -> PipelineConfig:
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    try:
        raw = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    base = config_path.parent

    corpus = raw.get("corpus") or {}
    provider = raw.get("provider") or {}
    execution = raw.get("execution") or {}
    roles_raw = raw.get("roles") or {}

    roles = {}
    for role_id in gw.ROLE_SLOTS:
        entry = roles_raw.get(role_id) or {}
        roles[role_id] = RoleConfig(
            model=entry.get("model", ""),
            temperature=float(entry.get("temperature", 0.2)),
            max_tokens=int(entry.get("max_tokens", 2048)),
            seed=entry.get("seed"),
        )

    config = PipelineConfig(
        corpus_source=_resolve(base, corpus.get("source")),
        corpus_format=corpus.get("format", "jsonl"),
        blocklist_dir=_resolve(base, raw.get("blocklist_dir")),
        shingle_tokens=int(raw.get("shingle_tokens", DEFAULT_SHINGLE_TOKENS)),
        allowlist=_resolve(base, raw.get("allowlist")),
        denylist=_resolve(base, raw.get("denylist")),
        max_function_chars=int(raw.get("max_function_chars", MAX_FUNCTION_CHARS)),
        provider_kind=provider.get("kind", "mock"),
        base_url=provider.get("base_url", ""),
        api_key_env=provider.get("api_key_env", "PROVIDER_API_KEY"),
        max_retries=int(provider.get("max_retries", 4)),
        requests_per_minute=provider.get("requests_per_minute"),
        mock_script=_resolve(base, provider.get("mock_script")),
        max_requests=provider.get("max_requests"),
        roles=roles,
        template_dir=_resolve(base, raw.get("template_dir")),
        max_round=int(raw.get("max_round", DEFAULT_MAX_ROUND)),
        executor_kind=execution.get("executor", "subprocess"),
        worker_command=list(execution.get("worker_command") or ["python", "-m", "testcell"]),
        stub_script=_resolve(base, execution.get("stub_script")),
        timeout_seconds=float(execution.get("timeout_seconds", 30)),
        flake_retries=int(execution.get("flake_retries", 1)),
        parallelism=int(execution.get("parallelism", os.cpu_count() or 1)),
        include_unrefined=bool(raw.get("include_unrefined", False)),
        stats_bucket_edges=[int(e) for e in raw.get("stats_bucket_edges") or DEFAULT_BUCKET_EDGES],
        eval_items=_resolve(base, raw.get("eval_items")),
        output_dir=Path(output_dir) if output_dir else (_resolve(base, raw.get("output_dir")) or base / "out"),
        raw=raw,
    )
    validate_config(config)
    return config


def validate_config(config: PipelineConfig) -> None:
    if config.max_round < 0:
        raise ConfigError("max_round must be >= 0")
    if config.parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    if config.timeout_seconds <= 0:
        raise ConfigError("timeout_seconds must be > 0")
    if config.shingle_tokens < 8:
        raise ConfigError("shingle_tokens must be >= 8")
    if not config.stats_bucket_edges or min(config.stats_bucket_edges) < 1:
        raise ConfigError("stats_bucket_edges must be positive integers")
    if config.corpus_format != "jsonl":
        raise ConfigError(f"unsupported corpus format: {config.corpus_format!r}")
    if config.provider_kind not in ("mock", "http"):
        raise ConfigError(f"provider.kind must be 'mock' or 'http', got {config.provider_kind!r}")
    if config.executor_kind not in ("stub", "subprocess"):
        raise ConfigError(f"execution.executor must be 'stub' or 'subprocess', got {config.executor_kind!r}")
    if config.provider_kind == "mock" and config.mock_script is None:
        raise ConfigError("provider.kind 'mock' requires provider.mock_script")
    if config.provider_kind == "http" and not config.base_url:
        raise ConfigError("provider.kind 'http' requires provider.base_url")
    if config.executor_kind == "stub" and config.stub_script is None:
        raise ConfigError("execution.executor 'stub' requires execution.stub_script")
    _require_exists(config.corpus_source, "corpus source")
    _require_exists(config.blocklist_dir, "blocklist_dir")
    _require_exists(config.allowlist, "allowlist")
    _require_exists(config.denylist, "denylist")
    _require_exists(config.mock_script, "mock_script")
    _require_exists(config.stub_script, "stub_script")
    _require_exists(config.eval_items, "eval_items")
    _require_exists(config.template_dir, "template_dir")


def build_gateway(config: PipelineConfig, mock_script: Path | None = None,
                  audit_path: Path | None = None) -> Gateway:
    roles = {}
    for role_id, role_config in config.roles.items():
        roles[role_id] = gw.default_role(
            role_id,
            provider_id=config.provider_kind,
            model=role_config.model,
            sampling=role_config.sampling(),
            template_dir=config.template_dir,
        )
    providers: dict[str, gw.Provider] = {}
    if config.provider_kind == "mock":
        script = mock_script or config.mock_script
        if script is None:
            raise ConfigError("mock provider requires a script")
        providers["mock"] = MockProvider.from_script(script)
    else:
        rate = None
        if config.requests_per_minute:
            rate = TokenBucket(rate=float(config.requests_per_minute) / 60.0, burst=1)
        providers["http"] = HttpChatProvider(
            base_url=config.base_url,
            api_key=os.environ.get(config.api_key_env, ""),
            max_retries=config.max_retries,
            rate_limit=rate,
        )
    return Gateway(roles=roles, providers=providers, max_requests=config.max_requests,
                   audit_path=audit_path)


def build_orchestrator(config: PipelineConfig) -> Orchestrator:
    policy = ExecutionPolicy(
        timeout_seconds=config.timeout_seconds,
        flake_retries=config.flake_retries,
        parallelism=config.parallelism,
    )
    if config.executor_kind == "stub":
        assert config.stub_script is not None
        executor = StubExecutor.from_script(config.stub_script)
    else:
        executor = SubprocessExecutor(config.worker_command)
    return Orchestrator(executor, policy)
