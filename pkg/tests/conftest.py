"""Shared fixtures and builders for the codeloop test suite.

Scenario files drive the scripted-mock backend; the directive convention
(# solves / # case / # error-class / # error-message) drives the stub
executor, so a test can author both sides of a run as plain text.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import pytest

from codeloop.backends import BackendDescriptor, ScriptedMockBackend
from codeloop.config import Config, validate_config
from codeloop.execution import DirectiveExecutor
from codeloop.pool import canonical_fingerprint
from codeloop.types import CandidateSolution, Problem, TestCase


# --- source builders -------------------------------------------------------

def directive_solution(solves: Sequence[str] | str, name: str = "impl") -> str:
    """Solution source that passes the named cases under DirectiveExecutor."""
    if isinstance(solves, str):
        spec = solves
    else:
        spec = " ".join(solves)
    return f"# solves: {spec}\ndef {name}():\n    return 0\n"


def directive_test(
    case: str,
    error_class: str | None = None,
    message: str | None = None,
    category: str | None = None,
) -> str:
    lines = [f"# case: {case}"]
    if error_class is not None:
        lines.append(f"# error-class: {error_class}")
    if message is not None:
        lines.append(f"# error-message: {message}")
    if category is not None:
        lines.append(f"# category: {category}")
    lines.append(f"assert check({case!r})")
    return "\n".join(lines) + "\n"


def two_fence_response(solution: str, tests: Iterable[str]) -> str:
    test_block = "\n".join(t.rstrip("\n") for t in tests)
    return (
        "Here is the implementation.\n\n"
        "```python\n" + solution.rstrip("\n") + "\n```\n\n"
        "And the test cases:\n\n"
        "```python\n" + test_block + "\n```\n"
    )


# --- object builders -------------------------------------------------------

def make_problem(
    pid: str = "p1",
    description: str = "Write a function.",
    gt_tests: Sequence[str] = (),
    gt_solution: str | None = None,
    entry_point: str | None = "impl",
) -> Problem:
    return Problem(
        problem_id=pid,
        description=description,
        entry_point=entry_point,
        ground_truth_tests=tuple(gt_tests),
        ground_truth_solution=gt_solution,
    )


def make_test(
    source: str,
    category: str = "regular",
    iteration: int = 1,
) -> TestCase:
    return TestCase(
        source=source,
        category=category,
        fingerprint=canonical_fingerprint(source),
        origin_iteration=iteration,
    )


def make_candidate(
    source: str,
    iteration: int = 1,
    sample_index: int = 0,
    backend_id: str = "mock",
) -> CandidateSolution:
    return CandidateSolution(
        source=source,
        iteration=iteration,
        sample_index=sample_index,
        backend_id=backend_id,
    )


# --- scenario files --------------------------------------------------------

def write_scenario(path: Path, records: Iterable[dict]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def scenario_record(
    pid: str,
    iteration: int,
    sample_index: int,
    response: str,
    tokens: int | None = 10,
) -> dict:
    rec = {
        "problem_id": pid,
        "iteration": iteration,
        "sample_index": sample_index,
        "response": response,
    }
    if tokens is not None:
        rec["tokens"] = tokens
    return rec


def mock_backend(scenario_path: Path, parallelism: int = 1) -> ScriptedMockBackend:
    desc = BackendDescriptor(
        backend_id="mock",
        kind="scripted-mock",
        scenario_path=str(scenario_path),
        request_parallelism=parallelism,
    )
    return ScriptedMockBackend(desc)


def write_mbpp_dataset(path: Path, rows: Iterable[dict]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


def mbpp_row(
    task_id: int,
    text: str = "Write a function.",
    code: str = "def impl():\n    return 0",
    tests: Sequence[str] = ("# case: gt\nassert check('gt')",),
) -> dict:
    return {
        "task_id": task_id,
        "text": text,
        "code": code,
        "test_list": list(tests),
        "test_setup_code": "",
    }


# --- fixtures --------------------------------------------------------------

@pytest.fixture
def cfg() -> Config:
    return validate_config({})


@pytest.fixture
def stub_executor() -> DirectiveExecutor:
    return DirectiveExecutor()
