"""codeloop: explore candidate programs, verify them against a self-grown
testing pool, and refine until the best one holds up."""

__version__ = "0.1.0"

from .config import Config, ConfigError, PRESETS, validate_config
from .types import (
    CandidateSolution,
    ExecutionReport,
    Instruction,
    IterationRecord,
    Problem,
    RefinementState,
    SolveResult,
    TestCase,
    TestOutcome,
    TrajectoryRecord,
)

__all__ = [
    "__version__",
    "Config",
    "ConfigError",
    "PRESETS",
    "validate_config",
    "Problem",
    "CandidateSolution",
    "TestCase",
    "TestOutcome",
    "ExecutionReport",
    "Instruction",
    "TrajectoryRecord",
    "IterationRecord",
    "RefinementState",
    "SolveResult",
]
