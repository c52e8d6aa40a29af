"""Dataset loading, final scoring, pass@k, and whole-benchmark runs.

A problem counts as solved only when its final solution passes every
ground-truth test. Ground-truth tests exist solely for this scoring step and
for trajectory verification; audit_instruction_isolation checks that none of
them ever appeared inside a rendered instruction.
"""
from __future__ import annotations

import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .backends import BackendResponse, GenerationBackend
from .config import Config
from .execution import Executor, ExecutorLimits, run_suite
from .exploration import parse_response
from .loop import RefinementLoop, TraceWriter
from .pool import Normalizer, canonical_fingerprint
from .prompts import TemplateRegistry, default_registry
from .types import CandidateSolution, Problem, SolveResult, TestCase

logger = logging.getLogger(__name__)

DATASET_FORMATS = ("mbpp-jsonl", "humaneval-jsonl")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class BenchOptions:
    dataset_format: str = "mbpp-jsonl"
    signature_hint: bool = False
    pass_k: int | None = None
    problem_parallelism: int = 1
    export_pools: bool = True


@dataclass(frozen=True)
class ProblemRecord:
    problem_id: str
    solved: bool
    final_rate: float
    final_solution_id: str | None
    iterations_used: int
    terminated_early: bool
    partial: bool
    tokens: int
    requests: int
    scoring_failed: bool = False
    error: str | None = None


@dataclass(frozen=True)
class EvalReport:
    dataset_id: str
    problem_count: int
    solved_count: int
    pass_at_1: float
    total_response_tokens: int
    tokens_approximate: bool
    exploration_requests_per_iteration: tuple[int, ...]
    active_tasks_per_iteration: tuple[int, ...]
    signature_hint: bool
    per_problem: tuple[ProblemRecord, ...]
    pass_k: int | None = None
    pass_at_k: float | None = None


def load_dataset(path: str | Path, format_id: str, signature_hint: bool = False) -> list[Problem]:
    """Parse a benchmark file into Problems. Malformed records name the line."""
    if format_id not in DATASET_FORMATS:
        raise DatasetError(f"unknown dataset format: {format_id!r} (choose from {DATASET_FORMATS})")
    path = Path(path)
    problems: list[Problem] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        try:
            if format_id == "mbpp-jsonl":
                problems.append(_mbpp_problem(rec, signature_hint))
            else:
                problems.append(_humaneval_problem(rec))
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return problems


def _mbpp_problem(rec: dict, signature_hint: bool) -> Problem:
    tests = [str(t) for t in rec["test_list"]]
    setup = rec.get("test_setup_code") or ""
    if setup.strip():
        tests = [f"{setup}\n{t}" for t in tests]
    description = str(rec["text"])
    if signature_hint and tests:
        description = f"{description}\nYour solution should satisfy:\n{rec['test_list'][0]}"
    return Problem(
        problem_id=str(rec["task_id"]),
        description=description,
        ground_truth_tests=tuple(tests),
        ground_truth_solution=rec.get("code"),
    )


def _humaneval_problem(rec: dict) -> Problem:
    entry_point = str(rec["entry_point"])
    composite = f"{rec['test']}\n\ncheck({entry_point})"
    return Problem(
        problem_id=str(rec["task_id"]),
        description=str(rec["prompt"]),
        entry_point=entry_point,
        ground_truth_tests=(composite,),
        ground_truth_solution=f"{rec['prompt']}{rec['canonical_solution']}",
    )


def score_final(
    problem: Problem,
    solution: CandidateSolution,
    executor: Executor,
    limits: ExecutorLimits,
    normalizer: Normalizer | None = None,
) -> bool:
    """True only if the solution passes every ground-truth test."""
    if not problem.ground_truth_tests:
        raise ValueError(f"problem {problem.problem_id} has no ground-truth tests")
    cases = [
        TestCase(
            source=src,
            category="ground_truth",
            fingerprint=canonical_fingerprint(src, normalizer),
            origin_iteration=0,
        )
        for src in problem.ground_truth_tests
    ]
    report = run_suite(executor, solution, cases, limits)
    return report.pass_count == report.total


def pass_at_k(outcome_matrix: list[list[bool]], k: int) -> float:
    """Empirical pass@k: the fraction of problems where any of the first k
    samples succeeded."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not outcome_matrix:
        raise ValueError("pass_at_k needs at least one problem")
    for row in outcome_matrix:
        if len(row) < k:
            raise ValueError(f"every problem needs at least {k} sample outcomes, got {len(row)}")
    hits = sum(1 for row in outcome_matrix if any(row[:k]))
    return hits / len(outcome_matrix)


def pass_at_k_estimator(n: int, c: int, k: int) -> float:
    """Unbiased estimator from n samples with c successes. Library helper;
    reports use the empirical definition above."""
    if not 0 <= c <= n:
        raise ValueError("need 0 <= c <= n")
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    if n - c < k:
        return 1.0
    return 1.0 - math.comb(n - c, k) / math.comb(n, k)


class _RecordingBackend:
    """Wraps a backend and keeps first-iteration response texts per problem,
    so pass@k over the exploration budget can be scored afterwards."""

    def __init__(self, inner: GenerationBackend) -> None:
        self._inner = inner
        self.descriptor = inner.descriptor
        self.first_iteration: dict[tuple[str, int], str] = {}
        self._lock = threading.Lock()

    def generate(
        self, problem_id: str, iteration: int, sample_index: int, prompt: str, temperature: float
    ) -> BackendResponse:
        resp = self._inner.generate(problem_id, iteration, sample_index, prompt, temperature)
        if iteration == 1:
            with self._lock:
                self.first_iteration.setdefault((problem_id, sample_index), resp.text)
        return resp


def run_benchmark(
    problems: list[Problem],
    cfg: Config,
    backend: GenerationBackend,
    executor: Executor,
    options: BenchOptions,
    *,
    dataset_id: str = "dataset",
    run_dir: str | Path | None = None,
    registry: TemplateRegistry | None = None,
    normalizer: Normalizer | None = None,
) -> tuple[EvalReport, dict]:
    """Solve every problem and score the finals against ground truth.

    Per-problem failures never abort the run; they surface as unsolved
    problems with an error string. Returns the report plus a timing sidecar
    dict (the only place wall-clock numbers live).
    """
    registry = registry or default_registry()
    limits = ExecutorLimits(
        per_test_timeout_ms=cfg.per_test_timeout_ms,
        suite_timeout_ms=cfg.suite_timeout_ms,
        max_parallel_workers=cfg.executor_parallelism,
    )
    if options.pass_k is not None:
        if options.pass_k > cfg.k:
            raise ValueError(f"pass_k={options.pass_k} exceeds k={cfg.k} samples per problem")
        backend = _RecordingBackend(backend)
    run_path = Path(run_dir) if run_dir is not None else None

    def solve_one(problem: Problem) -> tuple[ProblemRecord, SolveResult | None, float]:
        started = time.monotonic()
        trace = None
        try:
            if run_path is not None:
                trace = TraceWriter(run_path / "traces" / f"{problem.problem_id}.jsonl")
            loop = RefinementLoop(
                problem, cfg, backend, executor,
                registry=registry, normalizer=normalizer, trace=trace, limits=limits,
            )
            result = loop.solve()
            scoring_failed = False
            solved = False
            if result.final_solution is not None:
                try:
                    solved = score_final(problem, result.final_solution, executor, limits, normalizer)
                except Exception as exc:
                    logger.warning("scoring failed for %s: %s", problem.problem_id, exc)
                    scoring_failed = True
            if run_path is not None and options.export_pools:
                loop.state.pool.export_jsonl(run_path / "pools" / f"{problem.problem_id}.jsonl")
            if trace is not None:
                trace.append({"kind": "bench", "problem_id": problem.problem_id, "solved": solved})
            wall_ms = (time.monotonic() - started) * 1000.0
            record = ProblemRecord(
                problem_id=problem.problem_id,
                solved=solved,
                final_rate=result.final_rate,
                final_solution_id=(
                    result.final_solution.solution_id if result.final_solution else None
                ),
                iterations_used=result.iterations_used,
                terminated_early=result.terminated_early,
                partial=result.partial,
                tokens=sum(r.tokens for r in result.ledger),
                requests=sum(r.requests for r in result.ledger),
                scoring_failed=scoring_failed,
            )
            return record, result, wall_ms
        except Exception as exc:
            logger.exception("problem %s failed", problem.problem_id)
            wall_ms = (time.monotonic() - started) * 1000.0
            record = ProblemRecord(
                problem_id=problem.problem_id,
                solved=False,
                final_rate=0.0,
                final_solution_id=None,
                iterations_used=0,
                terminated_early=False,
                partial=True,
                tokens=0,
                requests=0,
                error=f"{type(exc).__name__}: {exc}",
            )
            return record, None, wall_ms

    workers = max(1, options.problem_parallelism)
    if workers == 1:
        rows = [solve_one(p) for p in problems]
    else:
        with ThreadPoolExecutor(max_workers=workers) as tp:
            rows = list(tp.map(solve_one, problems))

    records = [row[0] for row in rows]
    results = [row[1] for row in rows]
    timing = {
        "per_problem_wall_ms": {rec.problem_id: row[2] for rec, row in zip(records, rows)},
        "total_wall_ms": sum(row[2] for row in rows),
    }

    active = [0] * cfg.n
    requests_per_iter = [0] * cfg.n
    for result in results:
        if result is None:
            continue
        for row in result.ledger:
            if 1 <= row.iteration <= cfg.n:
                active[row.iteration - 1] += 1
                requests_per_iter[row.iteration - 1] += row.requests

    pass_k_value = None
    if options.pass_k is not None:
        assert isinstance(backend, _RecordingBackend)
        matrix = _first_iteration_outcomes(problems, backend, cfg, executor, limits, normalizer)
        pass_k_value = pass_at_k(matrix, options.pass_k)

    solved_count = sum(1 for rec in records if rec.solved)
    report = EvalReport(
        dataset_id=dataset_id,
        problem_count=len(problems),
        solved_count=solved_count,
        pass_at_1=(solved_count / len(problems)) if problems else 0.0,
        total_response_tokens=sum(rec.tokens for rec in records),
        tokens_approximate=any(r is not None and any(row.tokens_approximate for row in r.ledger) for r in results),
        exploration_requests_per_iteration=tuple(requests_per_iter),
        active_tasks_per_iteration=tuple(active),
        signature_hint=options.signature_hint,
        per_problem=tuple(records),
        pass_k=options.pass_k,
        pass_at_k=pass_k_value,
    )
    return report, timing


def _first_iteration_outcomes(
    problems: list[Problem],
    backend: _RecordingBackend,
    cfg: Config,
    executor: Executor,
    limits: ExecutorLimits,
    normalizer: Normalizer | None,
) -> list[list[bool]]:
    matrix: list[list[bool]] = []
    for problem in problems:
        row: list[bool] = []
        for sample_index in range(cfg.k):
            text = backend.first_iteration.get((problem.problem_id, sample_index))
            ok = False
            if text is not None:
                try:
                    source, _ = parse_response(text)
                    candidate = CandidateSolution(
                        source=source, iteration=1, sample_index=sample_index,
                        backend_id=backend.descriptor.backend_id,
                    )
                    ok = score_final(problem, candidate, executor, limits, normalizer)
                except Exception:
                    ok = False
            row.append(ok)
        matrix.append(row)
    return matrix


def report_to_dict(report: EvalReport) -> dict:
    return {
        "dataset_id": report.dataset_id,
        "problem_count": report.problem_count,
        "solved_count": report.solved_count,
        "pass_at_1": report.pass_at_1,
        "pass_k": report.pass_k,
        "pass_at_k": report.pass_at_k,
        "total_response_tokens": report.total_response_tokens,
        "tokens_approximate": report.tokens_approximate,
        "exploration_requests_per_iteration": list(report.exploration_requests_per_iteration),
        "active_tasks_per_iteration": list(report.active_tasks_per_iteration),
        "signature_hint": report.signature_hint,
        "per_problem": [
            {
                "problem_id": rec.problem_id,
                "solved": rec.solved,
                "final_rate": rec.final_rate,
                "final_solution_id": rec.final_solution_id,
                "iterations_used": rec.iterations_used,
                "terminated_early": rec.terminated_early,
                "partial": rec.partial,
                "tokens": rec.tokens,
                "requests": rec.requests,
                "scoring_failed": rec.scoring_failed,
                "error": rec.error,
            }
            for rec in report.per_problem
        ],
    }


def audit_instruction_isolation(traces_dir: str | Path, problems: list[Problem]) -> list[dict]:
    """Scan every rendered instruction in a run's traces for ground-truth test
    text. Returns one violation dict per hit; an empty list means isolation
    held."""
    gt_snippets: list[tuple[str, str]] = []
    for problem in problems:
        for src in problem.ground_truth_tests:
            snippet = src.strip()
            if snippet:
                gt_snippets.append((problem.problem_id, snippet))
    violations: list[dict] = []
    for trace_file in sorted(Path(traces_dir).glob("*.jsonl")):
        for line in trace_file.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("kind") != "step":
                continue
            instruction = rec.get("instruction", "")
            for gt_problem_id, snippet in gt_snippets:
                if snippet in instruction:
                    violations.append(
                        {
                            "trace_file": trace_file.name,
                            "iteration": rec.get("iteration"),
                            "ground_truth_of": gt_problem_id,
                            "snippet": snippet[:80],
                        }
                    )
    return violations


def recount_pass_at_1(traces_dir: str | Path) -> float:
    """Independent pass@1 recount from the bench records inside trace files."""
    solved = 0
    total = 0
    for trace_file in sorted(Path(traces_dir).glob("*.jsonl")):
        for line in trace_file.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("kind") == "bench":
                total += 1
                solved += 1 if rec.get("solved") else 0
    if total == 0:
        raise ValueError(f"no bench records found under {traces_dir}")
    return solved / total
