"""Domain types shared across the engine.

Everything here is a plain value object. The only mutable state in the engine
lives in TestingPool and RefinementState, both owned by the refinement loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .pool import TestingPool

TEST_CATEGORIES = ("regular", "boundary", "performance", "ground_truth")
OUTCOME_STATUSES = ("pass", "fail", "error", "timeout", "crash")
TRAJECTORY_KINDS = ("temperature", "reflection")


@dataclass(frozen=True)
class Problem:
    """A single programming task.

    ground_truth_tests are reserved for final scoring and trajectory
    verification; they must never leak into generation instructions.
    """

    problem_id: str
    description: str
    entry_point: str | None = None
    ground_truth_tests: tuple[str, ...] = ()
    ground_truth_solution: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "ground_truth_tests", tuple(self.ground_truth_tests))


@dataclass(frozen=True)
class CandidateSolution:
    source: str
    iteration: int
    sample_index: int
    backend_id: str

    @property
    def solution_id(self) -> str:
        return f"i{self.iteration}s{self.sample_index}"


@dataclass(frozen=True)
class TestCase:
    source: str
    category: str
    fingerprint: str
    origin_iteration: int

    def __post_init__(self) -> None:
        if self.category not in TEST_CATEGORIES:
            raise ValueError(f"unknown test category: {self.category!r}")


@dataclass(frozen=True)
class TestOutcome:
    """Result of running one test against one solution.

    error_type is present exactly when status is not "pass".
    """

    test_fingerprint: str
    status: str
    error_type: str | None = None
    message: str | None = None
    duration_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.status not in OUTCOME_STATUSES:
            raise ValueError(f"unknown outcome status: {self.status!r}")
        if (self.status == "pass") != (self.error_type is None):
            raise ValueError(
                "error_type must be present exactly when status is not 'pass' "
                f"(got status={self.status!r}, error_type={self.error_type!r})"
            )


@dataclass(frozen=True)
class ExecutionReport:
    solution_ref: str
    outcomes: tuple[TestOutcome, ...]
    pass_count: int
    total: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        if self.total != len(self.outcomes):
            raise ValueError("total must equal the number of outcomes")
        expected = sum(1 for o in self.outcomes if o.status == "pass")
        if self.pass_count != expected:
            raise ValueError("pass_count does not match outcomes")

    @classmethod
    def from_outcomes(cls, solution_ref: str, outcomes: list[TestOutcome] | tuple[TestOutcome, ...]) -> "ExecutionReport":
        outs = tuple(outcomes)
        return cls(
            solution_ref=solution_ref,
            outcomes=outs,
            pass_count=sum(1 for o in outs if o.status == "pass"),
            total=len(outs),
        )

    def outcome_for(self, fingerprint: str) -> TestOutcome | None:
        for o in self.outcomes:
            if o.test_fingerprint == fingerprint:
                return o
        return None


@dataclass(frozen=True)
class Instruction:
    """Structured prompt input: the problem plus, for refinement, the current
    best solution, one failed test, its feedback, and sampled passing tests.

    The four reflection fields are all-or-nothing; sampled_tests may be empty
    even on a refinement instruction.
    """

    problem: Problem
    template_id: str
    best_solution: str | None = None
    failed_test: str | None = None
    feedback: str | None = None
    sampled_tests: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "sampled_tests", tuple(self.sampled_tests))
        reflection = (self.best_solution, self.failed_test, self.feedback)
        if any(f is not None for f in reflection) and not all(f is not None for f in reflection):
            raise ValueError("reflection fields (best_solution, failed_test, feedback) are all-or-nothing")

    @property
    def is_refinement(self) -> bool:
        return self.best_solution is not None


@dataclass(frozen=True)
class TrajectoryRecord:
    problem_id: str
    input_text: str
    output_text: str
    temperature: float
    pass_rate: float
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind: {self.kind!r}")


@dataclass(frozen=True)
class IterationRecord:
    """One row of the per-problem ledger, written once per loop iteration."""

    iteration: int
    local_rate: float
    local_best_id: str | None
    merged: bool
    global_rate: float
    tests_added: int
    error_type_targeted: str | None
    tokens: int
    tokens_approximate: bool
    requests: int
    solutions_parsed: int
    barren: bool
    pool_size: int
    sampled_test_count: int


@dataclass
class RefinementState:
    """Mutable loop state: the pool, the running best, and bookkeeping."""

    pool: "TestingPool"
    global_best: CandidateSolution | None = None
    global_best_rate: float = 0.0
    seen_error_types: set[str] = field(default_factory=set)
    ledger: list[IterationRecord] = field(default_factory=list)


@dataclass(frozen=True)
class SolveResult:
    final_solution: CandidateSolution | None
    final_rate: float
    iterations_used: int
    terminated_early: bool
    ledger: tuple[IterationRecord, ...]
    partial: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "ledger", tuple(self.ledger))
