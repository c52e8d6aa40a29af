"""Instruction building, response parsing, and the k-sample exploration call.

Responses are expected to carry the solution in the first fenced code block
and tests in the following block(s). A response with a single fence can still
contribute tests through bare top-level assert lines in the prose. Parsing is
purely lexical; nothing here imports or executes candidate code.
"""
from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .backends import BackendResponse, GenerationBackend, approximate_tokens
from .config import Config
from .pool import Normalizer, canonical_fingerprint
from .prompts import (
    DEFAULT_GENERATE_TEMPLATE,
    DEFAULT_REFINE_TEMPLATE,
    TemplateRegistry,
    UnknownTemplateError,
    render_instruction,
)
from .types import CandidateSolution, Instruction, Problem, TestCase

logger = logging.getLogger(__name__)

_FENCE_RE = re.compile(r"```[^\S\n]*[\w+-]*[^\S\n]*\n(.*?)```", re.DOTALL)
_CATEGORY_RE = re.compile(r"#\s*category:\s*(regular|boundary|performance)")


class ParseError(ValueError):
    """The response has no usable solution block."""


@dataclass(frozen=True)
class ExplorationResult:
    solutions: tuple[CandidateSolution, ...]
    tests: tuple[TestCase, ...]
    raw_token_count: int
    token_count_approximate: bool = False
    request_count: int = 0
    test_producers: tuple[int, ...] = ()
    dropped_samples: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "solutions", tuple(self.solutions))
        object.__setattr__(self, "tests", tuple(self.tests))
        object.__setattr__(self, "test_producers", tuple(self.test_producers))
        object.__setattr__(self, "dropped_samples", tuple(self.dropped_samples))
        if len(self.test_producers) != len(self.tests):
            raise ValueError("every test needs a producing sample index")


def build_initial_instruction(
    problem: Problem,
    registry: TemplateRegistry,
    template_id: str = DEFAULT_GENERATE_TEMPLATE,
) -> Instruction:
    if not problem.description.strip():
        raise ValueError(f"problem {problem.problem_id} has an empty description")
    if template_id not in registry:
        raise UnknownTemplateError(f"unknown template: {template_id!r}")
    return Instruction(problem=problem, template_id=template_id)


def build_refinement_instruction(
    problem: Problem,
    best: CandidateSolution,
    failed_test: TestCase,
    feedback: str,
    sampled_tests: list[str],
    registry: TemplateRegistry,
    template_id: str = DEFAULT_REFINE_TEMPLATE,
) -> Instruction:
    if best is None or failed_test is None or feedback is None:
        raise ValueError("refinement needs the best solution, a failed test, and its feedback")
    if template_id not in registry:
        raise UnknownTemplateError(f"unknown template: {template_id!r}")
    return Instruction(
        problem=problem,
        template_id=template_id,
        best_solution=best.source,
        failed_test=failed_test.source,
        feedback=feedback,
        sampled_tests=tuple(sampled_tests),
    )


class _LineScanner:
    """Tracks string/comment/bracket state across the lines of a snippet, just
    enough to tell where a top-level statement ends."""

    def __init__(self) -> None:
        self.depth = 0
        self.in_triple: str | None = None
        self.continuation = False

    def feed(self, line: str) -> None:
        i = 0
        self.continuation = False
        n = len(line)
        while i < n:
            ch = line[i]
            if self.in_triple:
                end = line.find(self.in_triple, i)
                if end == -1:
                    return
                i = end + 3
                self.in_triple = None
                continue
            if ch == "#":
                return
            if ch in "\"'":
                if line.startswith(ch * 3, i):
                    self.in_triple = ch * 3
                    i += 3
                    continue
                # single-quoted strings do not span lines here
                j = i + 1
                while j < n:
                    if line[j] == "\\":
                        j += 2
                        continue
                    if line[j] == ch:
                        break
                    j += 1
                i = j + 1
                continue
            if ch in "([{":
                self.depth += 1
            elif ch in ")]}":
                self.depth = max(0, self.depth - 1)
            elif ch == "\\" and i == n - 1:
                self.continuation = True
            i += 1


def split_top_level(block: str) -> list[str]:
    """Split a code block into top-level statements.

    Indented lines, bracketed continuations, and backslash continuations stay
    attached to the current statement. Comment and decorator lines attach to
    the following statement; a trailing comment-only group is dropped.
    """
    statements: list[str] = []
    buf: list[str] = []
    has_code = False
    scanner = _LineScanner()

    def flush() -> None:
        nonlocal buf, has_code
        text = "\n".join(buf).rstrip()
        if text and has_code:
            statements.append(text)
        buf = []
        has_code = False

    for line in block.splitlines():
        stripped = line.strip()
        inside = scanner.depth > 0 or scanner.continuation or scanner.in_triple is not None
        if not stripped:
            if inside and buf:
                buf.append(line)
            continue
        indented = line[0] in (" ", "\t")
        if buf and not inside and not indented and has_code:
            flush()
        buf.append(line)
        if not inside and not stripped.startswith("#") and not stripped.startswith("@"):
            has_code = True
        scanner.feed(line)
    flush()
    return statements


def parse_response(raw: str) -> tuple[str, list[str]]:
    """Extract (solution_source, test_snippets) from a raw response.

    First fence is the solution; later fences are split into individual
    top-level statements as tests. With a single fence, bare top-level assert
    lines outside it are collected as tests instead.
    """
    raw = raw.replace("\r\n", "\n")
    fences = _FENCE_RE.findall(raw)
    if not fences:
        raise ParseError("response contains no fenced code block")
    solution = fences[0].strip("\n").rstrip()
    if not solution.strip():
        raise ParseError("solution block is empty")
    tests: list[str] = []
    if len(fences) > 1:
        for block in fences[1:]:
            tests.extend(split_top_level(block))
    else:
        prose = _FENCE_RE.sub("", raw)
        for line in prose.splitlines():
            stripped = line.strip()
            if stripped.startswith("assert ") or stripped == "assert":
                tests.append(stripped)
    return solution, tests


def infer_category(snippet: str) -> str:
    """Category from an explicit marker, else a comment keyword scan."""
    match = _CATEGORY_RE.search(snippet)
    if match:
        return match.group(1)
    comments = " ".join(
        line.strip().lower() for line in snippet.splitlines() if line.strip().startswith("#")
    )
    if "boundary" in comments or "edge" in comments:
        return "boundary"
    if "performance" in comments or "perf" in comments or "stress" in comments:
        return "performance"
    return "regular"


def explore(
    instruction: Instruction,
    cfg: Config,
    backend: GenerationBackend,
    registry: TemplateRegistry,
    iteration: int,
    normalizer: Normalizer | None = None,
) -> ExplorationResult:
    """Draw k samples at temperature cfg.t and parse them.

    Samples run concurrently up to the backend's request_parallelism and are
    merged in sample_index order. A malformed sample is re-asked up to the
    backend's retry_budget, then dropped with a log line. Every consumed
    response counts toward tokens and requests, retries included.
    """
    prompt = render_instruction(instruction, registry, cfg.m)
    descriptor = backend.descriptor
    problem_id = instruction.problem.problem_id

    def draw(sample_index: int) -> tuple[list[BackendResponse], tuple[str, list[str]] | None]:
        consumed: list[BackendResponse] = []
        for _ in range(1 + descriptor.retry_budget):
            resp = backend.generate(problem_id, iteration, sample_index, prompt, cfg.t)
            consumed.append(resp)
            try:
                return consumed, parse_response(resp.text)
            except ParseError as exc:
                logger.debug("sample %s/%s/%s malformed: %s", problem_id, iteration, sample_index, exc)
        return consumed, None

    workers = min(descriptor.request_parallelism, cfg.k)
    if workers <= 1:
        raw = [draw(i) for i in range(cfg.k)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as tp:
            raw = list(tp.map(draw, range(cfg.k)))

    solutions: list[CandidateSolution] = []
    tests: list[TestCase] = []
    producers: list[int] = []
    dropped: list[int] = []
    tokens = 0
    approximate = False
    requests = 0
    for sample_index, (consumed, parsed) in enumerate(raw):
        requests += len(consumed)
        for resp in consumed:
            if resp.tokens is None:
                tokens += approximate_tokens(resp.text)
                approximate = True
            else:
                tokens += resp.tokens
        if parsed is None:
            dropped.append(sample_index)
            logger.warning("dropping malformed sample %s/%s/%s", problem_id, iteration, sample_index)
            continue
        source, snippets = parsed
        solutions.append(
            CandidateSolution(
                source=source,
                iteration=iteration,
                sample_index=sample_index,
                backend_id=descriptor.backend_id,
            )
        )
        for snippet in snippets[: cfg.m]:
            tests.append(
                TestCase(
                    source=snippet,
                    category=infer_category(snippet),
                    fingerprint=canonical_fingerprint(snippet, normalizer),
                    origin_iteration=iteration,
                )
            )
            producers.append(sample_index)
    return ExplorationResult(
        solutions=tuple(solutions),
        tests=tuple(tests),
        raw_token_count=tokens,
        token_count_approximate=approximate,
        request_count=requests,
        test_producers=tuple(producers),
        dropped_samples=tuple(dropped),
    )
