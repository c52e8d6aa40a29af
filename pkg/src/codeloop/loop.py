"""The explore-verify-refine loop.

Each iteration draws k candidate solutions plus fresh tests, scores every
candidate against the deduped fresh tests, and adopts the iteration's best
only on strict improvement, absorbing its tests into the pool. Refinement
instructions carry the current best, one failing test with an error type not
yet targeted, its feedback, and a sample of passing tests. The loop stops
early once the global rate strictly exceeds theta.

Scoring uses the fresh batch only by default. With score_on_merged_pool the
suite becomes pool plus batch and the incumbent is re-scored on it for a
comparable check; in that mode the stored global rate tracks the union
denominator, so it is not monotone across iterations.
"""
from __future__ import annotations

import hashlib
import json
import logging
import random
import time
from pathlib import Path

from .backends import BackendUnavailableError, GenerationBackend
from .config import Config
from .execution import Executor, ExecutorLimits, pass_rate, run_suite
from .exploration import build_initial_instruction, build_refinement_instruction, explore
from .pool import (
    Normalizer,
    TestingPool,
    dedup_batch,
    merge_if_improving,
    next_error_target,
    sample_passing_tests,
)
from .prompts import (
    DEFAULT_GENERATE_TEMPLATE,
    DEFAULT_REFINE_TEMPLATE,
    TemplateRegistry,
    default_registry,
    render_instruction,
)
from .types import (
    CandidateSolution,
    ExecutionReport,
    IterationRecord,
    Problem,
    RefinementState,
    SolveResult,
    TestCase,
)

logger = logging.getLogger(__name__)

TRACE_VERSION = 1


def derive_problem_seed(run_seed: int, problem_id: str) -> int:
    """Independent per-problem stream: run seed xor a stable id hash."""
    digest = hashlib.sha256(problem_id.encode("utf-8")).hexdigest()[:16]
    return run_seed ^ int(digest, 16)


class TraceWriter:
    """Appends JSON-lines trace records; content is fully deterministic for a
    given seed and scenario (no wall-clock fields)."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")

    def append(self, record: dict) -> None:
        with self.path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


class RefinementLoop:
    def __init__(
        self,
        problem: Problem,
        cfg: Config,
        backend: GenerationBackend,
        executor: Executor,
        *,
        registry: TemplateRegistry | None = None,
        normalizer: Normalizer | None = None,
        trace: TraceWriter | None = None,
        generate_template: str = DEFAULT_GENERATE_TEMPLATE,
        refine_template: str = DEFAULT_REFINE_TEMPLATE,
        limits: ExecutorLimits | None = None,
    ) -> None:
        self.problem = problem
        self.cfg = cfg
        self.backend = backend
        self.executor = executor
        self.registry = registry or default_registry()
        self.normalizer = normalizer
        self.trace = trace
        self.refine_template = refine_template
        self.limits = limits or ExecutorLimits(
            per_test_timeout_ms=cfg.per_test_timeout_ms,
            suite_timeout_ms=cfg.suite_timeout_ms,
            max_parallel_workers=cfg.executor_parallelism,
        )
        self.rng = random.Random(derive_problem_seed(cfg.rng_seed, problem.problem_id))
        self.state = RefinementState(pool=TestingPool())
        self.instruction = build_initial_instruction(problem, self.registry, generate_template)
        self._best_raw_rate = -1.0
        self._best_raw_solution: CandidateSolution | None = None

    def step(self, iteration: int) -> IterationRecord:
        """One loop iteration; mutates state and returns the ledger row."""
        state = self.state
        cfg = self.cfg
        best_report = None
        if state.global_best is not None:
            best_report = state.pool.report_for(state.global_best.solution_id)
        sampled = sample_passing_tests(state.pool, best_report, cfg.m, self.rng)
        target = next_error_target(state.pool, best_report, state.seen_error_types, self.rng)
        error_type_targeted = None
        if target is not None and state.global_best is not None:
            self.instruction = build_refinement_instruction(
                self.problem,
                state.global_best,
                target.test,
                target.feedback,
                [tc.source for tc in sampled],
                self.registry,
                self.refine_template,
            )
            state.seen_error_types.add(target.error_type)
            error_type_targeted = target.error_type

        result = explore(self.instruction, cfg, self.backend, self.registry, iteration, self.normalizer)
        batch = dedup_batch(list(result.tests))

        local_rate = 0.0
        local_best: CandidateSolution | None = None
        local_report: ExecutionReport | None = None
        merged = False
        tests_added = 0
        barren = not result.solutions
        if not barren:
            suite = self._scoring_suite(batch)
            if suite:
                baseline = None
                if cfg.score_on_merged_pool and state.global_best is not None:
                    incumbent = run_suite(self.executor, state.global_best, suite, self.limits)
                    baseline = pass_rate(incumbent)
                for solution in result.solutions:
                    report = run_suite(self.executor, solution, suite, self.limits)
                    rate = pass_rate(report)
                    if rate > self._best_raw_rate:
                        self._best_raw_rate = rate
                        self._best_raw_solution = solution
                    if rate > local_rate:
                        local_rate = rate
                        local_best = solution
                        local_report = report
                before = len(state.pool)
                merged = merge_if_improving(state, batch, local_rate, local_best, baseline_rate=baseline)
                tests_added = len(state.pool) - before
                if merged and local_report is not None:
                    state.pool.record_report(local_report)

        record = IterationRecord(
            iteration=iteration,
            local_rate=local_rate,
            local_best_id=local_best.solution_id if local_best else None,
            merged=merged,
            global_rate=state.global_best_rate,
            tests_added=tests_added,
            error_type_targeted=error_type_targeted,
            tokens=result.raw_token_count,
            tokens_approximate=result.token_count_approximate,
            requests=result.request_count,
            solutions_parsed=len(result.solutions),
            barren=barren,
            pool_size=len(state.pool),
            sampled_test_count=len(sampled),
        )
        state.ledger.append(record)
        self._trace_step(record)
        return record

    def solve(self) -> SolveResult:
        cfg = self.cfg
        started = time.monotonic()
        terminated_early = False
        partial = False
        for iteration in range(1, cfg.n + 1):
            if cfg.solve_timeout_ms is not None:
                elapsed_ms = (time.monotonic() - started) * 1000.0
                if elapsed_ms > cfg.solve_timeout_ms:
                    logger.warning("problem %s hit the solve ceiling, stopping", self.problem.problem_id)
                    partial = True
                    break
            try:
                self.step(iteration)
            except BackendUnavailableError as exc:
                logger.warning("backend failed on %s iteration %d: %s", self.problem.problem_id, iteration, exc)
                partial = True
                break
            if self.state.global_best_rate > cfg.theta:
                terminated_early = True
                break

        if self.state.global_best is not None:
            final_solution: CandidateSolution | None = self.state.global_best
            final_rate = self.state.global_best_rate
        else:
            final_solution = self._best_raw_solution
            final_rate = 0.0
        result = SolveResult(
            final_solution=final_solution,
            final_rate=final_rate,
            iterations_used=len(self.state.ledger),
            terminated_early=terminated_early,
            ledger=tuple(self.state.ledger),
            partial=partial,
        )
        self._trace_final(result)
        return result

    def _scoring_suite(self, batch: list[TestCase]) -> list[TestCase]:
        if not self.cfg.score_on_merged_pool:
            return batch
        pool_tests = self.state.pool.tests
        pool_fps = {tc.fingerprint for tc in pool_tests}
        return pool_tests + [tc for tc in batch if tc.fingerprint not in pool_fps]

    def _trace_step(self, record: IterationRecord) -> None:
        if self.trace is None:
            return
        self.trace.append(
            {
                "v": TRACE_VERSION,
                "kind": "step",
                "problem_id": self.problem.problem_id,
                "iteration": record.iteration,
                "instruction": render_instruction(self.instruction, self.registry, self.cfg.m),
                "template_id": self.instruction.template_id,
                "reflection": self.instruction.is_refinement,
                "error_type_targeted": record.error_type_targeted,
                "sampled_test_count": record.sampled_test_count,
                "solutions_parsed": record.solutions_parsed,
                "requests": record.requests,
                "tokens": record.tokens,
                "tokens_approximate": record.tokens_approximate,
                "local_rate": record.local_rate,
                "local_best_id": record.local_best_id,
                "merged": record.merged,
                "global_rate": record.global_rate,
                "tests_added": record.tests_added,
                "pool_size": record.pool_size,
                "barren": record.barren,
            }
        )

    def _trace_final(self, result: SolveResult) -> None:
        if self.trace is None:
            return
        self.trace.append(
            {
                "v": TRACE_VERSION,
                "kind": "final",
                "problem_id": self.problem.problem_id,
                "final_solution_id": result.final_solution.solution_id if result.final_solution else None,
                "final_rate": result.final_rate,
                "iterations_used": result.iterations_used,
                "terminated_early": result.terminated_early,
                "partial": result.partial,
            }
        )


def solve_problem(
    problem: Problem,
    cfg: Config,
    backend: GenerationBackend,
    executor: Executor,
    **kwargs,
) -> SolveResult:
    return RefinementLoop(problem, cfg, backend, executor, **kwargs).solve()
