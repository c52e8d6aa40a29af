#!/usr/bin/env python3
"""Sweep the early-stop threshold theta and report how much work it saves.

Builds a synthetic 20-problem set where half the problems are solved by the
first exploration and half never get past a 0.5 pass rate, then runs the full
benchmark once per theta. Problems whose pass rate clears theta stop
refining, so the active-task counts and token totals shrink; pass@1 does not
move, since the extra iterations never rescue the hard half.

Usage:
    python3 scripts/theta_budget_sweep.py [--thetas 0.8,1.0] [--n 3] [--out runs/theta-sweep]
"""
import argparse
import json
import logging
from pathlib import Path

from codeloop.backends import BackendDescriptor, ScriptedMockBackend
from codeloop.bench import BenchOptions, load_dataset, run_benchmark
from codeloop.config import validate_config
from codeloop.execution import DirectiveExecutor

EASY_COUNT = 10
HARD_COUNT = 10


def fenced(solution, tests):
    test_block = "\n".join(tests)
    return (
        "Attempt below.\n\n```python\n" + solution.rstrip()
        + "\n```\n\n```python\n" + test_block + "\n```\n"
    )


def build_fixture(out: Path, n: int) -> tuple[Path, Path]:
    """20 problems: 10 solved at iteration 1, 10 stuck at rate 0.5."""
    problems = out / "problems.jsonl"
    scenario = out / "scenario.jsonl"
    rows = []
    records = []
    for pid in range(1, EASY_COUNT + HARD_COUNT + 1):
        rows.append(
            {
                "task_id": pid,
                "text": f"Task {pid}: write the function.",
                "code": "def impl():\n    return 0",
                "test_list": [f"# case: gt{pid}\nassert check('gt{pid}')"],
                "test_setup_code": "",
            }
        )
        easy = pid <= EASY_COUNT
        for iteration in range(1, n + 1):
            if easy:
                solution = "# solves: *\ndef impl():\n    return 0\n"
                tests = [
                    f"# case: a{pid}_{iteration}\nassert check('a{pid}_{iteration}')",
                    f"# case: b{pid}_{iteration}\nassert check('b{pid}_{iteration}')",
                ]
            else:
                solution = f"# solves: a{pid}_{iteration}\ndef impl():\n    return 0\n"
                tests = [
                    f"# case: a{pid}_{iteration}\nassert check('a{pid}_{iteration}')",
                    f"# case: c{pid}_{iteration}\nassert check('c{pid}_{iteration}')",
                ]
            records.append(
                {
                    "problem_id": str(pid),
                    "iteration": iteration,
                    "sample_index": 0,
                    "response": fenced(solution, tests),
                    "tokens": 40,
                }
            )
    with problems.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    with scenario.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return problems, scenario


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--thetas", default="0.8,1.0", help="comma-separated thresholds")
    parser.add_argument("--n", type=int, default=3, help="refinement iterations")
    parser.add_argument("--out", default="runs/theta-sweep", help="output directory")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)

    thetas = [float(part) for part in args.thetas.split(",") if part.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problems_path, scenario_path = build_fixture(out, args.n)
    problems = load_dataset(problems_path, "mbpp-jsonl")

    print(f"{'theta':>6}  {'pass@1':>7}  {'tokens':>7}  active tasks per iteration")
    for theta in thetas:
        cfg = validate_config({"k": 1, "n": args.n, "theta": theta, "rng_seed": args.seed})
        descriptor = BackendDescriptor(
            backend_id="sweep-mock",
            kind="scripted-mock",
            scenario_path=str(scenario_path),
            request_parallelism=1,
        )
        backend = ScriptedMockBackend(descriptor)
        report, timing = run_benchmark(
            problems,
            cfg,
            backend,
            DirectiveExecutor(),
            BenchOptions(),
            dataset_id="theta-sweep",
            run_dir=out / f"theta-{theta}",
        )
        active = ", ".join(str(count) for count in report.active_tasks_per_iteration)
        print(
            f"{theta:>6.2f}  {report.pass_at_1:>7.3f}  {report.total_response_tokens:>7d}  [{active}]"
            f"  ({timing['total_wall_ms']:.0f} ms)"
        )


if __name__ == "__main__":
    main()
