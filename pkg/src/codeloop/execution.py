"""Running candidate solutions against tests.

Three executors share one interface. SandboxExecutor spawns the external
harness per test and speaks its one-line JSON protocol. TableExecutor answers
from an explicit (solution_id, test_fingerprint) table. DirectiveExecutor
reads in-band markers from mock sources (see below), which is what scripted
scenarios use, so the whole engine runs without any interpreter in the loop.

Directive convention for mock sources:
  solution:  "# solves: name1 name2"  or  "# solves: *"
  test:      "# case: name1"  plus optional
             "# error-class: TypeError"   (default AssertionError)
             "# error-message: text"
"""
from __future__ import annotations

import json
import logging
import re
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeoutError
from dataclasses import dataclass
from typing import Protocol

from .types import CandidateSolution, ExecutionReport, TestCase, TestOutcome

logger = logging.getLogger(__name__)

_KNOWN_ERROR_LABELS = {
    "AssertionError": "assertion-failure",
    "TypeError": "type-error",
    "NameError": "name-error",
}

_KILL_GRACE_MS = 500
DEFAULT_MAX_OUTPUT_BYTES = 4096


@dataclass(frozen=True)
class ExecutorLimits:
    per_test_timeout_ms: int = 2000
    suite_timeout_ms: int = 30000
    max_parallel_workers: int = 4
    max_output_bytes: int = DEFAULT_MAX_OUTPUT_BYTES

    def __post_init__(self) -> None:
        if self.per_test_timeout_ms > self.suite_timeout_ms:
            raise ValueError("per_test_timeout_ms must be <= suite_timeout_ms")
        if self.max_parallel_workers < 1:
            raise ValueError("max_parallel_workers must be >= 1")


class Executor(Protocol):
    def execute(self, solution: CandidateSolution, test: TestCase, limits: ExecutorLimits) -> TestOutcome: ...


def classify_error(error_class: str | None, status: str) -> str:
    """Stable error label for an outcome. Known exception classes get short
    names; everything else becomes runtime-error:<class>."""
    if status == "timeout":
        return "timeout"
    if status == "crash":
        return "crash"
    if error_class is None:
        return "runtime-error:unknown"
    return _KNOWN_ERROR_LABELS.get(error_class, f"runtime-error:{error_class}")


class TableExecutor:
    """Literal lookup table keyed by (solution_id, test_fingerprint).

    Entries are (status, error_class, message) triples; unknown keys fall back
    to default_status.
    """

    def __init__(
        self,
        table: dict[tuple[str, str], tuple[str, str | None, str | None]],
        default_status: str = "fail",
    ) -> None:
        self._table = dict(table)
        self._default_status = default_status

    def execute(self, solution: CandidateSolution, test: TestCase, limits: ExecutorLimits) -> TestOutcome:
        entry = self._table.get((solution.solution_id, test.fingerprint))
        if entry is None:
            entry = (self._default_status, "AssertionError" if self._default_status != "pass" else None, None)
        status, error_class, message = entry
        error_type = None if status == "pass" else classify_error(error_class, status)
        return TestOutcome(
            test_fingerprint=test.fingerprint,
            status=status,
            error_type=error_type,
            message=message,
            duration_ms=0.0,
        )


_CASE_RE = re.compile(r"^\s*#\s*case:\s*(\S+)", re.MULTILINE)
_SOLVES_RE = re.compile(r"^\s*#\s*solves:\s*(.*)$", re.MULTILINE)
_ERROR_CLASS_RE = re.compile(r"^\s*#\s*error-class:\s*(\S+)", re.MULTILINE)
_ERROR_MSG_RE = re.compile(r"^\s*#\s*error-message:\s*(.*)$", re.MULTILINE)


class DirectiveExecutor:
    """Outcome oracle for scripted scenarios, driven by source markers."""

    def execute(self, solution: CandidateSolution, test: TestCase, limits: ExecutorLimits) -> TestOutcome:
        case_match = _CASE_RE.search(test.source)
        case = case_match.group(1) if case_match else test.fingerprint
        solves_match = _SOLVES_RE.search(solution.source)
        solves = solves_match.group(1).split() if solves_match else []
        if "*" in solves or case in solves:
            return TestOutcome(test_fingerprint=test.fingerprint, status="pass", duration_ms=0.0)
        class_match = _ERROR_CLASS_RE.search(test.source)
        error_class = class_match.group(1) if class_match else "AssertionError"
        msg_match = _ERROR_MSG_RE.search(test.source)
        message = msg_match.group(1).strip() if msg_match else f"{case} failed"
        if error_class == "timeout":
            status = "timeout"
        elif error_class == "crash":
            status = "crash"
        elif error_class == "AssertionError":
            status = "fail"
        else:
            status = "error"
        return TestOutcome(
            test_fingerprint=test.fingerprint,
            status=status,
            error_type=classify_error(error_class, status),
            message=message,
            duration_ms=0.0,
        )


class SandboxExecutor:
    """Runs each test in a fresh harness subprocess.

    The harness self-terminates at timeout_ms; the parent enforces a hard kill
    shortly after in case the child wedges. max_processes caps concurrent
    harness subprocesses across every suite sharing this executor.
    """

    def __init__(self, harness_cmd: list[str], max_processes: int | None = None) -> None:
        if not harness_cmd:
            raise ValueError("harness_cmd must be a non-empty argv list")
        self._cmd = list(harness_cmd)
        self._slots = threading.BoundedSemaphore(max_processes) if max_processes else None

    def execute(self, solution: CandidateSolution, test: TestCase, limits: ExecutorLimits) -> TestOutcome:
        if self._slots is not None:
            with self._slots:
                return self._execute(solution, test, limits)
        return self._execute(solution, test, limits)

    def _execute(self, solution: CandidateSolution, test: TestCase, limits: ExecutorLimits) -> TestOutcome:
        request = json.dumps(
            {
                "v": 1,
                "mode": "run",
                "solution_source": solution.source,
                "test_source": test.source,
                "timeout_ms": limits.per_test_timeout_ms,
            }
        )
        deadline_s = (limits.per_test_timeout_ms + _KILL_GRACE_MS) / 1000.0
        started = time.monotonic()
        try:
            proc = subprocess.Popen(
                self._cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
            )
        except OSError as exc:
            return self._crash(test, f"failed to spawn harness: {exc}")
        try:
            stdout, stderr = proc.communicate(input=request + "\n", timeout=deadline_s)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.communicate()
            elapsed = (time.monotonic() - started) * 1000.0
            return TestOutcome(
                test_fingerprint=test.fingerprint,
                status="timeout",
                error_type="timeout",
                message=f"killed by parent after {limits.per_test_timeout_ms}ms plus grace",
                duration_ms=elapsed,
            )
        reply = self._parse_reply(stdout)
        if reply is None:
            tail = (stderr or "").strip()[-limits.max_output_bytes :]
            return self._crash(test, f"harness exited {proc.returncode} with no response; stderr: {tail}")
        status = reply.get("status")
        if status not in ("pass", "fail", "error", "timeout"):
            return self._crash(test, f"harness reported unknown status {status!r}")
        message = reply.get("message")
        if isinstance(message, str) and len(message) > limits.max_output_bytes:
            message = message[: limits.max_output_bytes]
        error_type = None if status == "pass" else classify_error(reply.get("error_class"), status)
        return TestOutcome(
            test_fingerprint=test.fingerprint,
            status=status,
            error_type=error_type,
            message=message,
            duration_ms=float(reply.get("duration_ms") or 0.0),
        )

    @staticmethod
    def _parse_reply(stdout: str | None) -> dict | None:
        if not stdout:
            return None
        for line in reversed(stdout.strip().splitlines()):
            line = line.strip()
            if not line:
                continue
            try:
                reply = json.loads(line)
            except json.JSONDecodeError:
                return None
            return reply if isinstance(reply, dict) else None
        return None

    @staticmethod
    def _crash(test: TestCase, message: str) -> TestOutcome:
        return TestOutcome(
            test_fingerprint=test.fingerprint,
            status="crash",
            error_type="crash",
            message=message,
            duration_ms=0.0,
        )


def run_suite(
    executor: Executor,
    solution: CandidateSolution,
    tests: list[TestCase],
    limits: ExecutorLimits,
) -> ExecutionReport:
    """Execute every test against the solution, up to max_parallel_workers at
    a time. Outcomes come back in input order regardless of worker count; an
    empty suite is a contract violation."""
    if not tests:
        raise ValueError("run_suite requires a non-empty test list")
    deadline = time.monotonic() + limits.suite_timeout_ms / 1000.0
    workers = min(limits.max_parallel_workers, len(tests))
    outcomes: list[TestOutcome] = []
    if workers == 1:
        for tc in tests:
            outcomes.append(_run_or_suite_timeout(executor, solution, tc, limits, deadline))
    else:
        with ThreadPoolExecutor(max_workers=workers) as tp:
            futures = [tp.submit(executor.execute, solution, tc, limits) for tc in tests]
            for tc, fut in zip(tests, futures):
                remaining = deadline - time.monotonic()
                try:
                    outcomes.append(fut.result(timeout=max(remaining, 0.001)))
                except FutureTimeoutError:
                    fut.cancel()
                    outcomes.append(_suite_timeout_outcome(tc))
    return ExecutionReport.from_outcomes(solution.solution_id, outcomes)


def _run_or_suite_timeout(
    executor: Executor, solution: CandidateSolution, tc: TestCase, limits: ExecutorLimits, deadline: float
) -> TestOutcome:
    if time.monotonic() >= deadline:
        return _suite_timeout_outcome(tc)
    return executor.execute(solution, tc, limits)


def _suite_timeout_outcome(tc: TestCase) -> TestOutcome:
    return TestOutcome(
        test_fingerprint=tc.fingerprint,
        status="timeout",
        error_type="timeout",
        message="suite timeout exceeded",
        duration_ms=0.0,
    )


def pass_rate(report: ExecutionReport) -> float:
    if report.total < 1:
        raise ValueError("pass_rate of an empty report is undefined")
    return report.pass_count / report.total


def select_best(reports: list[ExecutionReport]) -> int:
    """Index of the best report; ties go to the smallest index."""
    if not reports:
        raise ValueError("select_best requires at least one report")
    best_idx = 0
    best = pass_rate(reports[0])
    for idx in range(1, len(reports)):
        rate = pass_rate(reports[idx])
        if rate > best:
            best = rate
            best_idx = idx
    return best_idx
