"""Operator CLI: stage-by-stage commands plus one end-to-end run.

Each stage reads the previous stage's artifact from the output directory,
writes its own artifact plus a JSON report, and records itself in
``run_state.json``; ``run-all --resume`` continues from the last completed
stage. Artifacts embed no wall-clock data, so a mock-provider run is byte
reproducible. Exit codes: 0 success, 2 config error, 3 input error,
4 provider error, 5 budget halt.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import shutil
import sys
from importlib import resources
from pathlib import Path

import click

from . import dataset as ds
from . import extract as ex
from . import gateway as gw
from . import geneval
from . import ingest as ig
from . import loop as lp
from . import refine as rf
from .config import ConfigError, PipelineConfig, build_gateway, build_orchestrator, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_PROVIDER = 4
EXIT_BUDGET = 5

PIPELINE_STAGES = ["ingest", "extract", "gen-tests", "execute", "improve", "refine", "export", "stats"]

LOCK_NAME = ".unitsmith.lock"


class InputError(RuntimeError):
    pass


class Paths:
    """Artifact layout inside one output directory."""

    def __init__(self, output_dir: Path):
        self.root = output_dir
        self.documents = output_dir / "documents.jsonl"
        self.units = output_dir / "units.jsonl"
        self.suites = output_dir / "suites.jsonl"
        self.gen_skips = output_dir / "gen_skips.jsonl"
        self.checkpoints = output_dir / "checkpoints"
        self.refined = output_dir / "refined.jsonl"
        self.unrefined = output_dir / "unrefined_kept.jsonl"
        self.dataset = output_dir / "dataset.jsonl"
        self.manifest = output_dir / "dataset_manifest.json"
        self.reports = output_dir / "reports"
        self.logs = output_dir / "logs"
        self.run_state = output_dir / "run_state.json"
        self.run_report = output_dir / "run_report.json"

    def ensure(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        self.reports.mkdir(exist_ok=True)
        self.logs.mkdir(exist_ok=True)

    def report(self, stage: str) -> Path:
        return self.reports / f"{stage.replace('-', '_')}.json"

    def require(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise InputError(f"missing {path.name}; run the '{producer}' stage first")
        return path


@contextlib.contextmanager
def run_lock(output_dir: Path):
    """One pipeline run per output directory; stale locks are reclaimed."""
    output_dir.mkdir(parents=True, exist_ok=True)
    lock = output_dir / LOCK_NAME
    if lock.exists():
        try:
            pid = int(lock.read_text().strip())
        except ValueError:
            pid = -1
        if pid > 0 and _pid_alive(pid):
            raise InputError(f"output directory is locked by running pid {pid}: {lock}")
        lock.unlink()
    lock.write_text(str(os.getpid()), encoding="utf-8")
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _load_run_state(paths: Paths) -> list[str]:
    if paths.run_state.exists():
        return json.loads(paths.run_state.read_text(encoding="utf-8")).get("completed", [])
    return []


def _mark_completed(paths: Paths, stage: str) -> None:
    """Record the stage as done and invalidate everything after it."""
    completed = _load_run_state(paths)
    index = PIPELINE_STAGES.index(stage) if stage in PIPELINE_STAGES else None
    if index is not None:
        completed = [s for s in completed if s in PIPELINE_STAGES and PIPELINE_STAGES.index(s) < index]
        completed.append(stage)
    paths.run_state.write_text(json.dumps({"completed": completed}, indent=2) + "\n", encoding="utf-8")


def _config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(config.snapshot(), sort_keys=True)
    return hashlib.blake2b(canonical.encode("utf-8"), digest_size=16).hexdigest()


def _write_report(paths: Paths, stage: str, report: dict, config: PipelineConfig) -> None:
    body = dict(report)
    body.setdefault("config_hash", _config_hash(config))
    paths.report(stage).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _default_config_lines(name: str) -> list[str]:
    text = resources.files("unitsmith").joinpath("data", name).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip() and not line.strip().startswith("#")]


# ── Stage implementations ───────────────────────────────────────────────


def stage_ingest(config: PipelineConfig, paths: Paths) -> dict:
    if config.corpus_source is None:
        raise ConfigError("corpus.source is required for the ingest stage")
    stats = ig.IngestStats()
    docs = ig.ingest(config.corpus_source, config.corpus_format, stats)
    docs = ig.dedup_exact(docs, stats)
    if config.blocklist_dir is not None:
        blocklist = ig.Blocklist.from_directory(config.blocklist_dir, n=config.shingle_tokens)
    else:
        blocklist = ig.Blocklist.empty(n=config.shingle_tokens)
    docs = ig.decontaminate(docs, blocklist, stats)
    kept = ig.write_documents(docs, paths.documents)
    report = stats.to_report()
    report.update({"kept": kept, "content_hash": "blake2b-128", "shingle_tokens": config.shingle_tokens})
    return report


def stage_extract(config: PipelineConfig, paths: Paths) -> dict:
    paths.require(paths.documents, "ingest")
    if config.allowlist is not None:
        allowlist = ex.PackageAllowlist.from_file(config.allowlist)
    else:
        allowlist = ex.PackageAllowlist(frozenset(_default_config_lines("default_allowlist.txt")))
    if config.denylist is not None:
        deny_patterns = ex.read_config_lines(config.denylist)
    else:
        deny_patterns = _default_config_lines("default_denylist.txt")
    denylist = ex.compile_denylist(deny_patterns)

    stats = ex.ExtractStats()
    all_units: list[ex.FunctionUnit] = []
    for doc in ig.read_documents(paths.documents):
        all_units.extend(ex.extract_functions(doc, stats, config.max_function_chars))
    d_pkg = ex.filter_by_packages(all_units, allowlist)
    d_p_safe = ex.safety_screen(d_pkg, denylist)
    ex.write_units(d_p_safe, paths.units)
    report = stats.to_report()
    report.update({"d_pkg": len(d_pkg), "d_p_safe": len(d_p_safe)})
    return report


def stage_gen_tests(config: PipelineConfig, paths: Paths, gateway: gw.Gateway, orchestrator) -> dict:
    paths.require(paths.units, "extract")
    units = list(ex.read_units(paths.units))
    loop = lp.ImprovementLoop(gateway, orchestrator, max_round=config.max_round)
    loop.admit(units)
    loop.generate_suites()
    with paths.suites.open("w", encoding="utf-8") as handle:
        for cid in loop.order:
            suite = loop.candidates[cid].suite
            if suite is not None:
                handle.write(json.dumps(suite.to_record(), sort_keys=True) + "\n")
    with paths.gen_skips.open("w", encoding="utf-8") as handle:
        for cid in loop.order:
            candidate = loop.candidates[cid]
            if candidate.status == lp.STATUS_SKIPPED:
                handle.write(json.dumps(
                    {"candidate_id": cid, "reason": candidate.skip_reason}, sort_keys=True) + "\n")
    suites = sum(1 for cid in loop.order if loop.candidates[cid].suite is not None)
    return {"units": len(units), "suites": suites, "skipped": len(loop.state.d_skipped)}


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(json.loads(line))
    return records


def stage_execute(config: PipelineConfig, paths: Paths, gateway: gw.Gateway, orchestrator) -> dict:
    paths.require(paths.units, "extract")
    paths.require(paths.suites, "gen-tests")
    units = list(ex.read_units(paths.units))
    suites = [gw.UnitTestSuite.from_record(r) for r in _read_jsonl(paths.suites)]
    skips = []
    if paths.gen_skips.exists():
        skips = [(r["candidate_id"], r["reason"]) for r in _read_jsonl(paths.gen_skips)]
    if paths.checkpoints.exists():
        shutil.rmtree(paths.checkpoints)
    loop = lp.ImprovementLoop(gateway, orchestrator, max_round=config.max_round,
                              checkpoint_dir=paths.checkpoints)
    loop.admit(units)
    loop.assign_suites(suites, skips)
    state = loop.execute_initial()
    _log_round_results(loop, 0, paths)
    return {
        "admitted": len(loop.candidates),
        "d_pass": len(state.d_pass),
        "d_curr": len(state.d_curr),
        "d_skipped": len(state.d_skipped),
    }


def _log_round_results(loop: lp.ImprovementLoop, round_no: int, paths: Paths) -> None:
    results = []
    for cid in loop.order:
        for r, _src, result in loop.candidates[cid].history:
            if r == round_no:
                results.append(result)
    from .orchestrator import write_execution_log

    write_execution_log(results, paths.logs / "execution.jsonl")


def stage_improve(config: PipelineConfig, paths: Paths, gateway: gw.Gateway, orchestrator) -> dict:
    checkpoint = lp.latest_checkpoint(paths.checkpoints) if paths.checkpoints.exists() else None
    if checkpoint is None:
        raise InputError("no execution checkpoint found; run the 'execute' stage first")
    loop = lp.ImprovementLoop.resume(checkpoint, gateway, orchestrator, checkpoint_dir=paths.checkpoints)
    loop.max_round = config.max_round
    start_round = loop.state.round
    state = loop.finish_rounds()
    for round_no in range(start_round + 1, state.round + 1):
        _log_round_results(loop, round_no, paths)
    return {
        "admitted": len(loop.candidates),
        "rounds": state.round,
        "per_round_passes": loop.per_round_passes,
        "d_pass": len(state.d_pass),
        "d_curr": len(state.d_curr),
        "d_skipped": len(state.d_skipped),
        "exhausted": sum(1 for c in loop.candidates.values() if c.status == lp.STATUS_EXHAUSTED),
    }


def _load_final_loop(paths: Paths, gateway: gw.Gateway, orchestrator) -> lp.ImprovementLoop:
    final = paths.checkpoints / "partition_final.jsonl"
    if not final.exists():
        raise InputError("no final partition found; run the 'improve' stage first")
    return lp.ImprovementLoop.resume(final, gateway, orchestrator)


def stage_refine(config: PipelineConfig, paths: Paths, gateway: gw.Gateway, orchestrator) -> dict:
    loop = _load_final_loop(paths, gateway, orchestrator)
    refiner = rf.Refiner(gateway, orchestrator)
    audit = paths.logs / "refine_audit.jsonl"
    audit.unlink(missing_ok=True)
    passed = loop.passed_candidates()
    accepted, rejected = refiner.refine_all(passed, audit_path=audit)
    rf.write_refined(accepted, paths.refined)

    kept_unrefined: list[rf.RefinedUnit] = []
    if config.include_unrefined:
        rejected_ids = {r.candidate_id for r in rejected}
        for candidate in passed:
            if candidate.candidate_id in rejected_ids:
                fallback = _unrefined_fallback(candidate)
                if fallback is not None:
                    kept_unrefined.append(fallback)
    rf.write_refined(kept_unrefined, paths.unrefined)

    reasons: dict[str, int] = {}
    for rejection in rejected:
        reasons[rejection.reason] = reasons.get(rejection.reason, 0) + 1
    return {
        "passed": len(passed),
        "accepted": len(accepted),
        "rejected": len(rejected),
        "rejections_by_reason": dict(sorted(reasons.items())),
        "unrefined_kept": len(kept_unrefined),
    }


def _unrefined_fallback(candidate: lp.Candidate) -> rf.RefinedUnit | None:
    """A rejected candidate's passing source, usable only if it already
    carries a docstring (pair construction needs one)."""
    import ast

    try:
        tree = ast.parse(candidate.current_source)
    except SyntaxError:
        return None
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name == candidate.unit.name:
            docstring = ast.get_docstring(node, clean=False)
            if docstring:
                return rf.RefinedUnit(
                    candidate_id=candidate.candidate_id,
                    refined_source=candidate.current_source,
                    docstring=docstring,
                    verified=True,
                )
    return None


def stage_export(config: PipelineConfig, paths: Paths, gateway: gw.Gateway, orchestrator) -> dict:
    paths.require(paths.refined, "refine")
    loop = _load_final_loop(paths, gateway, orchestrator)
    refined = rf.read_refined(paths.refined)
    if config.include_unrefined and paths.unrefined.exists():
        refined.extend(rf.read_refined(paths.unrefined))
    refined.sort(key=lambda unit: unit.candidate_id)

    pairs = []
    build_errors = []
    for unit in refined:
        candidate = loop.candidates.get(unit.candidate_id)
        if candidate is None or candidate.suite is None:
            build_errors.append({"candidate_id": unit.candidate_id, "reason": "missing_candidate"})
            continue
        try:
            pairs.append(ds.build_pair(unit, candidate.unit, candidate.suite.source))
        except ds.PairBuildError as exc:
            build_errors.append({"candidate_id": unit.candidate_id, "reason": exc.reason})
    manifest = ds.export(pairs, paths.dataset, config_snapshot=config.snapshot(),
                         bucket_edges=config.stats_bucket_edges)
    report = dict(manifest)
    report["build_errors"] = build_errors
    return report


def stage_stats(config: PipelineConfig, paths: Paths) -> dict:
    paths.require(paths.dataset, "export")
    pairs = ds.read_pairs(paths.dataset)
    return ds.compute_stats(pairs, bucket_edges=config.stats_bucket_edges).to_record()


def stage_eval_generator(config: PipelineConfig, paths: Paths, gateway: gw.Gateway, orchestrator) -> dict:
    if config.eval_items is None:
        raise ConfigError("eval_items is required for the eval-generator stage")
    items = geneval.read_items(config.eval_items)
    report = geneval.evaluate_generator(items, gateway, orchestrator)
    geneval.write_report(report, paths.reports / "eval_generator.json")
    return report.to_record()


# ── Command plumbing ────────────────────────────────────────────────────


NEEDS_PROVIDER = {"gen-tests", "execute", "improve", "refine", "export", "eval-generator"}


def run_stage(stage: str, config: PipelineConfig, paths: Paths) -> dict:
    paths.ensure()
    if stage in NEEDS_PROVIDER:
        gateway = build_gateway(config, audit_path=paths.logs / "requests.jsonl")
        orchestrator = build_orchestrator(config)
    else:
        gateway = orchestrator = None

    if stage == "ingest":
        report = stage_ingest(config, paths)
    elif stage == "extract":
        report = stage_extract(config, paths)
    elif stage == "gen-tests":
        report = stage_gen_tests(config, paths, gateway, orchestrator)
    elif stage == "execute":
        report = stage_execute(config, paths, gateway, orchestrator)
    elif stage == "improve":
        report = stage_improve(config, paths, gateway, orchestrator)
    elif stage == "refine":
        report = stage_refine(config, paths, gateway, orchestrator)
    elif stage == "export":
        report = stage_export(config, paths, gateway, orchestrator)
    elif stage == "stats":
        report = stage_stats(config, paths)
    elif stage == "eval-generator":
        report = stage_eval_generator(config, paths, gateway, orchestrator)
    else:
        raise ConfigError(f"unknown stage: {stage}")

    _write_report(paths, stage, report, config)
    _mark_completed(paths, stage)
    return report


def run_all(config: PipelineConfig, paths: Paths, resume: bool = False) -> dict:
    paths.ensure()
    completed = set(_load_run_state(paths)) if resume else set()
    for stage in PIPELINE_STAGES:
        if stage in completed:
            continue
        run_stage(stage, config, paths)
    stage_reports = {}
    for stage in PIPELINE_STAGES:
        report_path = paths.report(stage)
        stage_reports[stage] = json.loads(report_path.read_text(encoding="utf-8"))
    final = {
        "stages": stage_reports,
        "dataset": paths.dataset.name,
        "dataset_manifest": stage_reports["export"].get("file_hash"),
        "pair_count": stage_reports["export"].get("count"),
        "config": config.snapshot(),
    }
    paths.run_report.write_text(json.dumps(final, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return final


@click.group()
@click.option("--config", "config_path", type=click.Path(), required=True, help="Pipeline config YAML.")
@click.option("--output-dir", type=click.Path(), default=None, help="Override the config's output directory.")
@click.option("--parallelism", type=int, default=None, help="Override execution parallelism.")
@click.option("--mock-script", type=click.Path(), default=None,
              help="Use the mock provider with this script, overriding the config.")
@click.option("--resume", is_flag=True, default=False, help="Skip stages already completed (run-all).")
@click.pass_context
def main(ctx: click.Context, config_path: str, output_dir: str | None, parallelism: int | None,
         mock_script: str | None, resume: bool) -> None:
    """Corpus-to-dataset pipeline: generate tests, execute, repair, refine, export."""
    try:
        config = load_config(config_path, output_dir=output_dir)
        if parallelism is not None:
            if parallelism < 1:
                raise ConfigError("parallelism must be >= 1")
            config.parallelism = parallelism
        if mock_script is not None:
            script = Path(mock_script)
            if not script.exists():
                raise ConfigError(f"mock script not found: {script}")
            config.provider_kind = "mock"
            config.mock_script = script
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    ctx.obj = {"config": config, "paths": Paths(config.output_dir), "resume": resume}


def _stage_command(stage: str):
    @main.command(stage)
    @click.pass_context
    def _command(ctx: click.Context) -> None:
        config, paths = ctx.obj["config"], ctx.obj["paths"]
        with _exit_codes():
            with run_lock(paths.root):
                report = run_stage(stage, config, paths)
            click.echo(json.dumps(report, indent=2, sort_keys=True))

    _command.__name__ = f"cmd_{stage.replace('-', '_')}"
    return _command


for _stage in PIPELINE_STAGES + ["eval-generator"]:
    _stage_command(_stage)


@main.command("run-all")
@click.pass_context
def cmd_run_all(ctx: click.Context) -> None:
    """Run every pipeline stage in order, checkpointing between stages."""
    config, paths, resume = ctx.obj["config"], ctx.obj["paths"], ctx.obj["resume"]
    with _exit_codes():
        with run_lock(paths.root):
            final = run_all(config, paths, resume=resume)
        click.echo(json.dumps({"pair_count": final["pair_count"],
                               "dataset_manifest": final["dataset_manifest"]}, indent=2))


@contextlib.contextmanager
def _exit_codes():
    """Map pipeline failures onto the documented exit-code taxonomy."""
    try:
        yield
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (InputError, FileNotFoundError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    except gw.BudgetExceededError as exc:
        click.echo(f"budget halt: {exc}", err=True)
        sys.exit(EXIT_BUDGET)
    except (gw.ProviderError, gw.MockScriptMissError) as exc:
        click.echo(f"provider error: {exc}", err=True)
        sys.exit(EXIT_PROVIDER)


if __name__ == "__main__":
    main()
