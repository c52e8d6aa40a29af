"""Command line entry points: solve, bench, collect, replay.

Every run writes a manifest into its run directory before any work starts.
The manifest holds the resolved config, the redacted backend descriptor (the
API key env var is named, its value never serialized), input file hashes, and
the seed: enough to replay a scripted-mock run byte for byte. Commands exit 0
on success, 1 on configuration errors, 2 on backend failure, 3 on partial
results.
"""
from __future__ import annotations

import datetime
import hashlib
import json
import logging
import shlex
import sys
import tempfile
from pathlib import Path

import click

from . import __version__
from .backends import (
    BackendDescriptor,
    BackendError,
    BackendUnavailableError,
    build_backend,
)
from .bench import (
    BenchOptions,
    DatasetError,
    audit_instruction_isolation,
    load_dataset,
    report_to_dict,
    run_benchmark,
)
from .collect import DEFAULT_TEMPERATURE_GRID, export_dataset, run_collection
from .config import ConfigError, config_to_dict, validate_config
from .execution import DirectiveExecutor, SandboxExecutor
from .loop import RefinementLoop, TraceWriter
from .pool import LexicalNormalizer, TreeNormalizer
from .prompts import UnknownTemplateError, default_registry

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BACKEND = 2
EXIT_PARTIAL = 3

DEFAULT_HARNESS_CMD = f"{sys.executable} -m codeloop_harness"


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config_overrides(params: dict) -> dict:
    mapping = {
        "k": "k",
        "n": "n",
        "m": "m",
        "t": "t",
        "theta": "theta",
        "seed": "rng_seed",
        "per_test_timeout_ms": "per_test_timeout_ms",
        "suite_timeout_ms": "suite_timeout_ms",
        "executor_parallelism": "executor_parallelism",
        "solve_timeout_ms": "solve_timeout_ms",
    }
    out: dict = {}
    for flag, key in mapping.items():
        value = params.get(flag)
        if value is not None:
            out[key] = value
    if params.get("score_on_merged_pool"):
        out["score_on_merged_pool"] = True
    return out


def _resolve_config(params: dict):
    """Precedence: CLI flags > config file > preset > defaults."""
    merged: dict = {}
    config_path = params.get("config")
    file_doc: dict = {}
    if config_path:
        try:
            file_doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(file_doc, dict):
            raise ConfigError(f"config file {config_path} must hold a flat JSON object")
    if "preset" in file_doc:
        merged["preset"] = file_doc["preset"]
    if params.get("preset"):
        merged["preset"] = params["preset"]
    merged.update({k: v for k, v in file_doc.items() if k != "preset"})
    merged.update(_config_overrides(params))
    return validate_config(merged)


def _backend_descriptor(params: dict) -> BackendDescriptor:
    kind = {"mock": "scripted-mock", "http": "http-chat"}[params["backend"]]
    scenario = params.get("scenario")
    return BackendDescriptor(
        backend_id=params.get("backend_id") or params["backend"],
        kind=kind,
        endpoint=params.get("endpoint"),
        model=params.get("model"),
        api_key_env=params.get("api_key_env") or "CODELOOP_API_KEY",
        scenario_path=str(Path(scenario).resolve()) if scenario else None,
        request_parallelism=params.get("request_parallelism") or 4,
        retry_budget=params.get("retry_budget") if params.get("retry_budget") is not None else 1,
    )


def _executor_section(params: dict) -> dict:
    kind = params.get("executor") or "stub"
    fingerprints = params.get("fingerprints") or "auto"
    if fingerprints == "auto":
        fingerprints = "tree" if kind == "sandbox" else "lexical"
    return {
        "kind": kind,
        "harness_cmd": shlex.split(params.get("harness_cmd") or DEFAULT_HARNESS_CMD),
        "max_processes": params.get("max_processes"),
        "fingerprints": fingerprints,
    }


def _build_executor(section: dict):
    if section["kind"] == "sandbox":
        return SandboxExecutor(section["harness_cmd"], max_processes=section.get("max_processes"))
    return DirectiveExecutor()


def _build_normalizer(section: dict):
    if section["fingerprints"] == "tree":
        return TreeNormalizer(section["harness_cmd"])
    return LexicalNormalizer()


def _manifest(command: str, params: dict, cfg, descriptor: BackendDescriptor, dataset_path: Path, options: dict) -> dict:
    backend_section = descriptor.redacted()
    if descriptor.scenario_path:
        backend_section["scenario_sha256"] = _sha256_file(Path(descriptor.scenario_path))
    return {
        "v": MANIFEST_VERSION,
        "command": command,
        "engine_version": __version__,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": cfg.rng_seed,
        "config": config_to_dict(cfg),
        "backend": backend_section,
        "executor": _executor_section(params),
        "dataset": {
            "path": str(dataset_path.resolve()),
            "format": params["format"],
            "sha256": _sha256_file(dataset_path),
            "signature_hint": bool(params.get("signature_hint")),
        },
        "options": options,
    }


def _run_from_manifest(manifest: dict, run_dir: Path) -> int:
    """Execute the run a manifest describes. Shared by the live commands and
    replay, which is what makes replays faithful."""
    cfg = validate_config(manifest["config"])
    backend_section = dict(manifest["backend"])
    backend_section.pop("scenario_sha256", None)
    descriptor = BackendDescriptor(**backend_section)
    backend = build_backend(descriptor)
    executor = _build_executor(manifest["executor"])
    normalizer = _build_normalizer(manifest["executor"])
    registry = default_registry()
    dataset = manifest["dataset"]
    problems = load_dataset(dataset["path"], dataset["format"], dataset.get("signature_hint", False))
    options = manifest.get("options", {})
    command = manifest["command"]

    if command == "solve":
        problem_id = options.get("problem_id")
        if problem_id is None:
            problem = problems[0]
        else:
            matches = [p for p in problems if p.problem_id == str(problem_id)]
            if not matches:
                raise ConfigError(f"problem {problem_id!r} not found in {dataset['path']}")
            problem = matches[0]
        trace = TraceWriter(run_dir / "traces" / f"{problem.problem_id}.jsonl")
        loop = RefinementLoop(
            problem, cfg, backend, executor, registry=registry, normalizer=normalizer, trace=trace
        )
        result = loop.solve()
        loop.state.pool.export_jsonl(run_dir / "pools" / f"{problem.problem_id}.jsonl")
        _write_json(
            run_dir / "result.json",
            {
                "problem_id": problem.problem_id,
                "final_rate": result.final_rate,
                "final_solution_id": (
                    result.final_solution.solution_id if result.final_solution else None
                ),
                "final_solution": result.final_solution.source if result.final_solution else None,
                "iterations_used": result.iterations_used,
                "terminated_early": result.terminated_early,
                "partial": result.partial,
            },
        )
        click.echo(
            f"{problem.problem_id}: rate={result.final_rate:.3f} "
            f"iterations={result.iterations_used} early_stop={result.terminated_early}"
        )
        return EXIT_PARTIAL if result.partial else EXIT_OK

    if command == "bench":
        bench_options = BenchOptions(
            dataset_format=dataset["format"],
            signature_hint=dataset.get("signature_hint", False),
            pass_k=options.get("pass_k"),
            problem_parallelism=options.get("jobs", 1),
            export_pools=options.get("export_pools", True),
        )
        report, timing = run_benchmark(
            problems, cfg, backend, executor, bench_options,
            dataset_id=Path(dataset["path"]).name,
            run_dir=run_dir, registry=registry, normalizer=normalizer,
        )
        _write_json(run_dir / "report.json", report_to_dict(report))
        _write_json(run_dir / "timing.json", timing)
        if options.get("audit", False):
            violations = audit_instruction_isolation(run_dir / "traces", problems)
            _write_json(run_dir / "audit.json", violations)
            if violations:
                click.echo(f"isolation audit found {len(violations)} violation(s)", err=True)
        click.echo(
            f"{report.dataset_id}: pass@1={report.pass_at_1:.3f} "
            f"({report.solved_count}/{report.problem_count}), "
            f"tokens={report.total_response_tokens}"
            + (f", pass@{report.pass_k}={report.pass_at_k:.3f}" if report.pass_at_k is not None else "")
        )
        degraded = any(rec.partial or rec.scoring_failed or rec.error for rec in report.per_problem)
        return EXIT_PARTIAL if degraded else EXIT_OK

    if command == "collect":
        temperatures = tuple(options.get("temperatures") or DEFAULT_TEMPERATURE_GRID)
        run = run_collection(
            problems, cfg, backend, executor,
            source_dataset=dataset["path"], source_hash=dataset["sha256"],
            temperatures=temperatures, registry=registry, normalizer=normalizer,
        )
        export_dataset(run, run_dir / "trajectories.jsonl")
        click.echo(
            f"collected {len(run.records)} trajectories "
            f"(temperature={run.kept_temperature}, reflection={run.kept_reflection}, "
            f"generated={run.generated}, skipped_problems={run.skipped_problems})"
        )
        return EXIT_PARTIAL if run.partial else EXIT_OK

    raise ConfigError(f"manifest has unknown command {command!r}")


def _finish(code: int) -> None:
    sys.exit(code)


def _guarded(fn):
    """Map error classes onto the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            code = fn(*args, **kwargs)
        except (ConfigError, DatasetError, UnknownTemplateError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            _finish(EXIT_CONFIG)
            return
        except BackendError as exc:
            click.echo(f"backend error: {exc}", err=True)
            _finish(EXIT_BACKEND)
            return
        _finish(code)

    wrapper.__name__ = fn.__name__
    return wrapper


def config_options(fn):
    decorators = [
        click.option("--preset", type=click.Choice(["default", "sota"]), default=None, help="Start from a named preset."),
        click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None, help="Flat JSON config file."),
        click.option("--k", type=int, default=None, help="Samples per exploration."),
        click.option("--n", type=int, default=None, help="Refinement iterations."),
        click.option("--m", type=int, default=None, help="Tests requested per sample."),
        click.option("--t", type=float, default=None, help="Sampling temperature."),
        click.option("--theta", type=float, default=None, help="Early-stop threshold (strict)."),
        click.option("--seed", type=int, default=None, help="Run seed."),
        click.option("--per-test-timeout-ms", type=int, default=None),
        click.option("--suite-timeout-ms", type=int, default=None),
        click.option("--executor-parallelism", type=int, default=None),
        click.option("--solve-timeout-ms", type=int, default=None),
        click.option("--score-on-merged-pool", is_flag=True, default=False, help="Score on pool plus fresh tests."),
    ]
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


def backend_options(fn):
    decorators = [
        click.option("--backend", type=click.Choice(["mock", "http"]), default="mock", show_default=True),
        click.option("--scenario", type=click.Path(exists=True, dir_okay=False), default=None, help="Scenario JSONL for the mock backend."),
        click.option("--endpoint", default=None, help="Chat completions URL for the http backend."),
        click.option("--model", default=None),
        click.option("--api-key-env", default="CODELOOP_API_KEY", show_default=True, help="Env var holding the API key."),
        click.option("--backend-id", default=None),
        click.option("--request-parallelism", type=int, default=None),
        click.option("--retry-budget", type=int, default=None, help="Re-asks per malformed sample."),
    ]
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


def executor_options(fn):
    decorators = [
        click.option("--executor", type=click.Choice(["stub", "sandbox"]), default="stub", show_default=True),
        click.option("--harness-cmd", default=None, help=f"Harness argv (default: {DEFAULT_HARNESS_CMD})."),
        click.option("--max-processes", type=int, default=None, help="Global cap on concurrent harness processes."),
        click.option("--fingerprints", type=click.Choice(["auto", "lexical", "tree"]), default="auto", show_default=True),
    ]
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="codeloop")
@click.option("-v", "--verbose", is_flag=True, default=False)
def main(verbose: bool) -> None:
    """Self-refining code generation over any text-generation backend."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _prepare(command: str, params: dict, options: dict) -> tuple[dict, Path]:
    cfg = _resolve_config(params)
    descriptor = _backend_descriptor(params)
    dataset_path = Path(params["problems"])
    run_dir = Path(params["run_dir"] or f"runs/{command}")
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(command, params, cfg, descriptor, dataset_path, options)
    _write_json(run_dir / "manifest.json", manifest)
    return manifest, run_dir


@main.command()
@click.option("--problems", type=click.Path(exists=True, dir_okay=False), required=True, help="Problem dataset (JSONL).")
@click.option("--format", "format", type=click.Choice(["mbpp-jsonl", "humaneval-jsonl"]), default="mbpp-jsonl", show_default=True)
@click.option("--problem-id", default=None, help="Which problem to solve (default: first).")
@click.option("--run-dir", type=click.Path(file_okay=False), default=None, help="Output directory (default runs/solve).")
@config_options
@backend_options
@executor_options
@_guarded
def solve(**params) -> int:
    """Solve one problem and write its trace, pool, and final solution."""
    manifest, run_dir = _prepare("solve", params, {"problem_id": params.get("problem_id")})
    return _run_from_manifest(manifest, run_dir)


@main.command()
@click.option("--problems", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--format", "format", type=click.Choice(["mbpp-jsonl", "humaneval-jsonl"]), default="mbpp-jsonl", show_default=True)
@click.option("--signature-hint", is_flag=True, default=False, help="Append the first ground-truth assert to each problem statement (recorded in the report).")
@click.option("--pass-k", type=int, default=None, help="Also score pass@k over first-iteration samples.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Problems solved concurrently.")
@click.option("--no-export-pools", is_flag=True, default=False)
@click.option("--audit", is_flag=True, default=False, help="Run the ground-truth isolation audit after the bench.")
@click.option("--run-dir", type=click.Path(file_okay=False), default=None)
@config_options
@backend_options
@executor_options
@_guarded
def bench(**params) -> int:
    """Run the loop over a whole dataset and score finals on ground truth."""
    options = {
        "pass_k": params.get("pass_k"),
        "jobs": params.get("jobs", 1),
        "export_pools": not params.get("no_export_pools", False),
        "audit": params.get("audit", False),
    }
    manifest, run_dir = _prepare("bench", params, options)
    return _run_from_manifest(manifest, run_dir)


@main.command()
@click.option("--problems", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--format", "format", type=click.Choice(["mbpp-jsonl", "humaneval-jsonl"]), default="mbpp-jsonl", show_default=True)
@click.option("--temperatures", default=None, help="Comma-separated grid (default 0.2,0.5,0.8,1.0).")
@click.option("--run-dir", type=click.Path(file_okay=False), default=None)
@config_options
@backend_options
@executor_options
@_guarded
def collect(**params) -> int:
    """Collect verified success trajectories for fine-tuning."""
    temperatures = None
    if params.get("temperatures"):
        try:
            temperatures = [float(x) for x in params["temperatures"].split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --temperatures value: {exc}") from exc
    manifest, run_dir = _prepare("collect", params, {"temperatures": temperatures})
    return _run_from_manifest(manifest, run_dir)


@main.command()
@click.option("--run-dir", type=click.Path(exists=True, file_okay=False), required=True, help="Directory holding a manifest.json from a previous run.")
@click.option("--keep", is_flag=True, default=False, help="Keep the replay output directory.")
@_guarded
def replay(run_dir: str, keep: bool) -> int:
    """Re-execute a recorded scripted-mock run and compare outputs byte for byte."""
    run_path = Path(run_dir)
    manifest_path = run_path / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("backend", {}).get("kind") != "scripted-mock":
        raise ConfigError("only scripted-mock runs are replayable")
    dataset = manifest["dataset"]
    if _sha256_file(Path(dataset["path"])) != dataset["sha256"]:
        raise ConfigError(f"dataset changed since the run: {dataset['path']}")
    scenario_path = manifest["backend"].get("scenario_path")
    recorded_scenario_hash = manifest["backend"].get("scenario_sha256")
    if scenario_path and recorded_scenario_hash:
        if _sha256_file(Path(scenario_path)) != recorded_scenario_hash:
            raise ConfigError(f"scenario changed since the run: {scenario_path}")

    replay_dir = Path(tempfile.mkdtemp(prefix="codeloop-replay-"))
    _run_from_manifest(manifest, replay_dir)

    compare = {
        "solve": ["result.json", "traces", "pools"],
        "bench": ["report.json", "traces", "pools"],
        "collect": ["trajectories.jsonl", "trajectories.jsonl.manifest.json"],
    }[manifest["command"]]
    mismatched: list[str] = []
    for entry in compare:
        original = run_path / entry
        fresh = replay_dir / entry
        mismatched.extend(_compare_entry(original, fresh))
    if mismatched:
        for name in mismatched:
            click.echo(f"mismatch: {name}", err=True)
        click.echo(f"replay diverged in {len(mismatched)} file(s)", err=True)
        code = EXIT_PARTIAL
    else:
        click.echo("replay matches the recorded run")
        code = EXIT_OK
    if keep:
        click.echo(f"replay output kept at {replay_dir}")
    return code


def _compare_entry(original: Path, fresh: Path) -> list[str]:
    if not original.exists() and not fresh.exists():
        return []
    if original.is_dir() or fresh.is_dir():
        names = set()
        if original.is_dir():
            names.update(p.name for p in original.iterdir())
        if fresh.is_dir():
            names.update(p.name for p in fresh.iterdir())
        out: list[str] = []
        for name in sorted(names):
            out.extend(_compare_entry(original / name, fresh / name))
        return out
    if not original.exists() or not fresh.exists() or original.read_bytes() != fresh.read_bytes():
        return [str(original)]
    return []


if __name__ == "__main__":
    main()
