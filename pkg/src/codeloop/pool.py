"""The self-grown testing pool: dedup by fingerprint, selection queries, and
the improve-only merge rule.

Fingerprints come in two grades. Tree-grade uses the sandbox harness's
normalize command (canonical syntax-tree dump, positions and comments gone).
Lexical-grade is computed in-process from the token stream: comments and
whitespace vanish, everything else survives. Lexical is strictly finer than
tree equivalence, so it may miss a duplicate but never conflates two tests
with different syntax trees. canonical_fingerprint never fails; anything
unparseable degrades to a whitespace-collapsed fallback.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import random
import subprocess
import tokenize
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Protocol, TYPE_CHECKING

from .types import ExecutionReport, TestCase

if TYPE_CHECKING:
    from .types import CandidateSolution, RefinementState

logger = logging.getLogger(__name__)

_DIGEST_CHARS = 32


class Normalizer(Protocol):
    def fingerprint(self, source: str) -> str: ...


def _digest(canonical: str, grade: str) -> str:
    return f"{grade}:{hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:_DIGEST_CHARS]}"


def _collapse_whitespace(source: str) -> str:
    lines = []
    for line in source.splitlines():
        parts = line.split()
        if parts:
            lines.append(" ".join(parts))
    return "\n".join(lines)


class LexicalNormalizer:
    """Token-stream canonicalization: drops comments and blank structure,
    keeps logical newlines and indentation as markers."""

    def fingerprint(self, source: str) -> str:
        try:
            canonical = self._canonical_tokens(source)
        except Exception:
            canonical = _collapse_whitespace(source)
        return _digest(canonical, "lex")

    @staticmethod
    def _canonical_tokens(source: str) -> str:
        out: list[str] = []
        for tok in tokenize.generate_tokens(io.StringIO(source).readline):
            if tok.type in (tokenize.COMMENT, tokenize.NL, tokenize.ENCODING, tokenize.ENDMARKER):
                continue
            if tok.type == tokenize.NEWLINE:
                out.append(";")
            elif tok.type == tokenize.INDENT:
                out.append(">>")
            elif tok.type == tokenize.DEDENT:
                out.append("<<")
            else:
                out.append(tok.string)
        return " ".join(out)


class TreeNormalizer:
    """Delegates to the sandbox harness normalize command; falls back to
    lexical grade when the harness fails or the source does not parse."""

    def __init__(self, harness_cmd: list[str], timeout_ms: int = 10000) -> None:
        self._cmd = list(harness_cmd)
        self._timeout_s = timeout_ms / 1000.0
        self._fallback = LexicalNormalizer()
        self._cache: dict[str, str] = {}

    def fingerprint(self, source: str) -> str:
        cached = self._cache.get(source)
        if cached is not None:
            return cached
        fp = self._ask_harness(source)
        if fp is None:
            fp = self._fallback.fingerprint(source)
        self._cache[source] = fp
        return fp

    def _ask_harness(self, source: str) -> str | None:
        request = json.dumps({"v": 1, "mode": "normalize", "test_source": source})
        try:
            proc = subprocess.run(
                self._cmd, input=request + "\n", capture_output=True, text=True, timeout=self._timeout_s
            )
            reply = json.loads(proc.stdout.strip().splitlines()[-1])
            if reply.get("status") == "ok" and reply.get("tree_fingerprint"):
                return str(reply["tree_fingerprint"])
        except Exception as exc:
            logger.debug("tree normalize failed, using lexical grade: %s", exc)
        return None


def canonical_fingerprint(source: str, normalizer: Normalizer | None = None) -> str:
    normalizer = normalizer or LexicalNormalizer()
    return normalizer.fingerprint(source)


@dataclass
class TestingPool:
    """Insertion-ordered, dedup-by-fingerprint test store. Tests are never
    removed; reports are cached per solution for the selection queries."""

    _tests: dict[str, TestCase] = field(default_factory=dict)
    _reports: dict[str, ExecutionReport] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self._tests)

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self._tests

    @property
    def tests(self) -> list[TestCase]:
        return list(self._tests.values())

    def get(self, fingerprint: str) -> TestCase | None:
        return self._tests.get(fingerprint)

    def record_report(self, report: ExecutionReport) -> None:
        self._reports[report.solution_ref] = report

    def report_for(self, solution_ref: str) -> ExecutionReport | None:
        return self._reports.get(solution_ref)

    def export_jsonl(self, path: str | Path) -> None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w") as fh:
            for tc in self._tests.values():
                fh.write(
                    json.dumps(
                        {
                            "source": tc.source,
                            "category": tc.category,
                            "fingerprint": tc.fingerprint,
                            "origin_iteration": tc.origin_iteration,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def add_tests(pool: TestingPool, new_tests: list[TestCase]) -> int:
    """Insert tests whose fingerprint is unseen; returns how many went in."""
    added = 0
    for tc in new_tests:
        if tc.fingerprint not in pool._tests:
            pool._tests[tc.fingerprint] = tc
            added += 1
    return added


def dedup_batch(tests: list[TestCase]) -> list[TestCase]:
    """Within-batch dedup, first occurrence wins, order preserved."""
    seen: set[str] = set()
    out: list[TestCase] = []
    for tc in tests:
        if tc.fingerprint not in seen:
            seen.add(tc.fingerprint)
            out.append(tc)
    return out


def sample_passing_tests(
    pool: TestingPool, best_report: ExecutionReport | None, m: int, rng: random.Random
) -> list[TestCase]:
    """Uniformly pick up to m pool tests the current best passes.

    Empty when there is no best yet. Only tests covered by the cached report
    are eligible; pool tests the best was never run against stay out.
    """
    if best_report is None:
        return []
    passing_fps = {o.test_fingerprint for o in best_report.outcomes if o.status == "pass"}
    population = [tc for tc in pool.tests if tc.fingerprint in passing_fps]
    if not population:
        return []
    return rng.sample(population, min(m, len(population)))


class ErrorTarget(NamedTuple):
    test: TestCase
    feedback: str
    error_type: str


def next_error_target(
    pool: TestingPool,
    best_report: ExecutionReport | None,
    seen_error_types: set[str],
    rng: random.Random,
) -> ErrorTarget | None:
    """Pick a failing pool test whose error type has not been targeted yet.

    Returns None only when the best fails nothing it was run against. When
    every present error type has been targeted, the seen set is cleared and
    selection retried once, so persistent errors get revisited.
    """
    if best_report is None:
        return None
    pool_fps = {tc.fingerprint for tc in pool.tests}
    failing: dict[str, list[tuple[TestCase, str]]] = {}
    for outcome in best_report.outcomes:
        if outcome.status == "pass" or outcome.test_fingerprint not in pool_fps:
            continue
        tc = pool.get(outcome.test_fingerprint)
        assert tc is not None
        feedback = outcome.message or f"test failed with {outcome.error_type}"
        failing.setdefault(outcome.error_type or "unknown", []).append((tc, feedback))
    if not failing:
        return None
    unseen = sorted(set(failing) - seen_error_types)
    if not unseen:
        seen_error_types.clear()
        unseen = sorted(failing)
    error_type = rng.choice(unseen)
    test, feedback = rng.choice(failing[error_type])
    return ErrorTarget(test=test, feedback=feedback, error_type=error_type)


def merge_if_improving(
    state: "RefinementState",
    candidate_tests: list[TestCase],
    local_rate: float,
    local_best: "CandidateSolution | None",
    baseline_rate: float | None = None,
) -> bool:
    """Adopt the iteration's best and absorb its tests only on strict
    improvement. baseline_rate overrides the stored global rate for the
    comparison (used by pool-union scoring)."""
    baseline = state.global_best_rate if baseline_rate is None else baseline_rate
    if local_best is None or not local_rate > baseline:
        return False
    state.global_best = local_best
    state.global_best_rate = local_rate
    add_tests(state.pool, candidate_tests)
    return True
