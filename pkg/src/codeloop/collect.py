"""Success-trajectory collection for later fine-tuning.

Two channels. The temperature channel sweeps a grid, draws k samples per
setting, and keeps outputs that pass every ground-truth test. The reflection
channel takes samples whose ground-truth pass rate is exactly zero, appends
feedback from their own failing generated tests to the original input, asks
for corrections, and keeps the ones ground truth fully confirms. Samples with
a pass rate strictly between 0 and 1 enter neither channel.

Mock scenarios key backend records by (problem_id, iteration, sample_index):
temperature rounds use iteration 1..len(grid) in grid order, reflection
attempts use iteration 100 + j with j counting a problem's eligible failures
from zero in discovery order.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .backends import BackendUnavailableError, GenerationBackend
from .config import Config
from .execution import Executor, ExecutorLimits, pass_rate, run_suite
from .exploration import ParseError, build_initial_instruction, explore, parse_response
from .pool import Normalizer, canonical_fingerprint
from .prompts import TemplateRegistry, default_registry, render_instruction
from .types import CandidateSolution, Problem, TestCase, TrajectoryRecord

logger = logging.getLogger(__name__)

FEEDBACK_DELIM = "Execution feedback:"
REFLECTION_ROUND_BASE = 100
DEFAULT_TEMPERATURE_GRID = (0.2, 0.5, 0.8, 1.0)
DATASET_VERSION = 1


@dataclass
class CollectionRun:
    source_dataset: str
    source_hash: str
    k: int
    temperature_grid: tuple[float, ...]
    records: list[TrajectoryRecord] = field(default_factory=list)
    generated: int = 0
    verified: int = 0
    kept_temperature: int = 0
    kept_reflection: int = 0
    skipped_problems: int = 0
    partial: bool = False


def _ground_truth_cases(problem: Problem, normalizer: Normalizer | None) -> list[TestCase]:
    return [
        TestCase(
            source=src,
            category="ground_truth",
            fingerprint=canonical_fingerprint(src, normalizer),
            origin_iteration=0,
        )
        for src in problem.ground_truth_tests
    ]


def _own_test_feedback(
    solution: CandidateSolution,
    own_tests: list[TestCase],
    executor: Executor,
    limits: ExecutorLimits,
) -> str | None:
    """Feedback text from the first of the sample's own tests it fails."""
    if not own_tests:
        return None
    report = run_suite(executor, solution, own_tests, limits)
    for outcome in report.outcomes:
        if outcome.status != "pass":
            return outcome.message or f"test failed with {outcome.error_type}"
    return None


def run_collection(
    problems: list[Problem],
    cfg: Config,
    backend: GenerationBackend,
    executor: Executor,
    *,
    source_dataset: str = "",
    source_hash: str = "",
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURE_GRID,
    registry: TemplateRegistry | None = None,
    normalizer: Normalizer | None = None,
    limits: ExecutorLimits | None = None,
) -> CollectionRun:
    registry = registry or default_registry()
    limits = limits or ExecutorLimits(
        per_test_timeout_ms=cfg.per_test_timeout_ms,
        suite_timeout_ms=cfg.suite_timeout_ms,
        max_parallel_workers=cfg.executor_parallelism,
    )
    run = CollectionRun(
        source_dataset=source_dataset,
        source_hash=source_hash,
        k=cfg.k,
        temperature_grid=tuple(temperatures),
    )
    for problem in problems:
        if not problem.ground_truth_tests:
            logger.warning("skipping %s: no ground-truth tests to verify against", problem.problem_id)
            run.skipped_problems += 1
            continue
        try:
            _collect_for_problem(problem, cfg, backend, executor, registry, normalizer, limits, run)
        except BackendUnavailableError as exc:
            logger.warning("backend failed during collection on %s: %s", problem.problem_id, exc)
            run.partial = True
            break
    return run


def _collect_for_problem(
    problem: Problem,
    cfg: Config,
    backend: GenerationBackend,
    executor: Executor,
    registry: TemplateRegistry,
    normalizer: Normalizer | None,
    limits: ExecutorLimits,
    run: CollectionRun,
) -> None:
    gt_cases = _ground_truth_cases(problem, normalizer)
    instruction = build_initial_instruction(problem, registry)
    base_input = render_instruction(instruction, registry, cfg.m)
    seen_outputs: set[str] = set()
    failures: list[tuple[CandidateSolution, str]] = []

    for round_no, temperature in enumerate(run.temperature_grid, start=1):
        result = explore(
            instruction,
            dataclasses.replace(cfg, t=temperature),
            backend,
            registry,
            iteration=round_no,
            normalizer=normalizer,
        )
        run.generated += cfg.k
        for solution in result.solutions:
            rate = pass_rate(run_suite(executor, solution, gt_cases, limits))
            run.verified += 1
            if rate == 1.0:
                if solution.source not in seen_outputs:
                    seen_outputs.add(solution.source)
                    run.records.append(
                        TrajectoryRecord(
                            problem_id=problem.problem_id,
                            input_text=base_input,
                            output_text=solution.source,
                            temperature=temperature,
                            pass_rate=1.0,
                            kind="temperature",
                        )
                    )
                    run.kept_temperature += 1
            elif rate == 0.0:
                own = [
                    tc
                    for tc, producer in zip(result.tests, result.test_producers)
                    if producer == solution.sample_index
                ]
                feedback = _own_test_feedback(solution, own, executor, limits)
                if feedback:
                    failures.append((solution, feedback))
            # rates strictly between 0 and 1 enter neither channel

    for attempt_index, (failed, feedback) in enumerate(failures):
        reflected_input = f"{base_input}\n\n{FEEDBACK_DELIM}\n{feedback}"
        round_no = REFLECTION_ROUND_BASE + attempt_index
        corrections = _sample_corrections(backend, problem.problem_id, round_no, reflected_input, cfg)
        run.generated += cfg.k
        for source in corrections:
            solution = CandidateSolution(
                source=source,
                iteration=round_no,
                sample_index=0,
                backend_id=backend.descriptor.backend_id,
            )
            rate = pass_rate(run_suite(executor, solution, gt_cases, limits))
            run.verified += 1
            if rate == 1.0 and source not in seen_outputs:
                seen_outputs.add(source)
                run.records.append(
                    TrajectoryRecord(
                        problem_id=problem.problem_id,
                        input_text=reflected_input,
                        output_text=source,
                        temperature=cfg.t,
                        pass_rate=1.0,
                        kind="reflection",
                    )
                )
                run.kept_reflection += 1


def _sample_corrections(
    backend: GenerationBackend, problem_id: str, round_no: int, prompt: str, cfg: Config
) -> list[str]:
    out: list[str] = []
    retry_budget = backend.descriptor.retry_budget
    for sample_index in range(cfg.k):
        parsed = None
        for _ in range(1 + retry_budget):
            resp = backend.generate(problem_id, round_no, sample_index, prompt, cfg.t)
            try:
                parsed, _tests = parse_response(resp.text)
                break
            except ParseError:
                continue
        if parsed is not None:
            out.append(parsed)
    return out


def export_dataset(run: CollectionRun, path: str | Path) -> Path:
    """Write the dataset JSONL plus a manifest; byte-identical on re-export.

    Records are sorted by (problem_id, kind) with insertion order breaking
    ties, and every record must carry pass_rate 1.0.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for record in run.records:
        if record.pass_rate != 1.0:
            raise ValueError(f"refusing to export a record with pass_rate {record.pass_rate}")
    ordered = sorted(
        enumerate(run.records), key=lambda pair: (pair[1].problem_id, pair[1].kind, pair[0])
    )
    with path.open("w") as fh:
        for _, record in ordered:
            fh.write(
                json.dumps(
                    {
                        "v": DATASET_VERSION,
                        "problem_id": record.problem_id,
                        "kind": record.kind,
                        "input_text": record.input_text,
                        "output_text": record.output_text,
                        "temperature": record.temperature,
                        "pass_rate": record.pass_rate,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    histogram: dict[str, int] = {}
    for record in run.records:
        key = repr(record.temperature)
        histogram[key] = histogram.get(key, 0) + 1
    manifest = {
        "v": DATASET_VERSION,
        "source_dataset": run.source_dataset,
        "source_hash": run.source_hash,
        "k": run.k,
        "temperature_grid": list(run.temperature_grid),
        "counts": {
            "total": len(run.records),
            "temperature": run.kept_temperature,
            "reflection": run.kept_reflection,
        },
        "generated": run.generated,
        "verified": run.verified,
        "skipped_problems": run.skipped_problems,
        "temperature_histogram": dict(sorted(histogram.items())),
    }
    manifest_path = path.with_name(path.name + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path
