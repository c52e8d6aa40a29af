#!/usr/bin/env python3
"""Generate a small self-contained demo: a three-problem dataset plus the
scripted responses that walk the engine through a full refinement.

Problem 101 starts with a sign bug caught by a generated edge-case test and
gets fixed in iteration 2. Problem 102 is solved immediately and stops early
under theta < 1. Problem 103 first crashes with a TypeError, then converts
its inputs. Solutions carry both directive annotations and real code, so the
same scenario works with --executor stub and --executor sandbox.

Usage:
    python3 scripts/make_demo_scenario.py [--out demo]
Then follow the printed commands.
"""
import argparse
import json
from pathlib import Path


def fenced(solution, tests, lead="Here is my attempt."):
    test_block = "\n".join(t.rstrip("\n") for t in tests)
    return (
        f"{lead}\n\n```python\n{solution.rstrip()}\n```\n\n"
        f"Test cases:\n\n```python\n{test_block}\n```\n"
    )


DOUBLE_BUGGY = """\
# solves: double_two double_zero
def double(x):
    if x < 0:
        return 0
    return x * 2
"""

DOUBLE_FIXED = """\
# solves: *
def double(x):
    return x * 2
"""

REVERSE_OK = """\
# solves: *
def reverse_text(s):
    return s[::-1]
"""

JOIN_BUGGY = """\
# solves: join_words
def join_items(items):
    return ''.join(items)
"""

JOIN_FIXED = """\
# solves: *
def join_items(items):
    return ''.join(str(item) for item in items)
"""

PROBLEMS = [
    {
        "task_id": 101,
        "text": "Write a function double(x) that returns twice its argument.",
        "code": "def double(x):\n    return x * 2",
        "test_list": ["# case: gt_double\nassert double(21) == 42"],
        "test_setup_code": "",
    },
    {
        "task_id": 102,
        "text": "Write a function reverse_text(s) that reverses a string.",
        "code": "def reverse_text(s):\n    return s[::-1]",
        "test_list": ["# case: gt_reverse\nassert reverse_text('abc') == 'cba'"],
        "test_setup_code": "",
    },
    {
        "task_id": 103,
        "text": "Write a function join_items(items) that concatenates list elements as strings.",
        "code": "def join_items(items):\n    return ''.join(str(item) for item in items)",
        "test_list": ["# case: gt_join\nassert join_items([1, 'a', 2]) == '1a2'"],
        "test_setup_code": "",
    },
]


def scenario_records():
    recs = []

    def rec(pid, iteration, response, tokens):
        recs.append(
            {
                "problem_id": pid,
                "iteration": iteration,
                "sample_index": 0,
                "response": response,
                "tokens": tokens,
            }
        )

    rec("101", 1, fenced(DOUBLE_BUGGY, [
        "# case: double_two\nassert double(2) == 4",
        "# case: double_zero\nassert double(0) == 0",
        "# case: double_neg\nassert double(-3) == -6",
    ]), 64)
    rec("101", 2, fenced(DOUBLE_FIXED, [
        "# case: double_big\nassert double(1000) == 2000",
    ], lead="The negative branch was wrong; dropping it."), 48)

    ok_reverse = fenced(REVERSE_OK, [
        "# case: reverse_abc\nassert reverse_text('abc') == 'cba'",
        "# case: reverse_empty\nassert reverse_text('') == ''",
    ])
    rec("102", 1, ok_reverse, 52)
    # replayed if someone runs with theta=1.0 and n=2
    rec("102", 2, ok_reverse, 52)

    rec("103", 1, fenced(JOIN_BUGGY, [
        "# case: join_words\nassert join_items(['a', 'b']) == 'ab'",
        "# case: concat_mixed\n# error-class: TypeError\nassert join_items([1, 'a']) == '1a'",
    ]), 70)
    rec("103", 2, fenced(JOIN_FIXED, [
        "# case: join_empty\nassert join_items([]) == ''",
    ], lead="Casting every element before joining."), 55)
    return recs


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="demo", help="output directory (default: demo)")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problems = out / "problems.jsonl"
    scenario = out / "scenario.jsonl"
    with problems.open("w", encoding="utf-8") as fh:
        for row in PROBLEMS:
            fh.write(json.dumps(row) + "\n")
    with scenario.open("w", encoding="utf-8") as fh:
        for row in scenario_records():
            fh.write(json.dumps(row) + "\n")

    print(f"wrote {problems} ({len(PROBLEMS)} problems)")
    print(f"wrote {scenario} ({len(scenario_records())} scripted responses)")
    print()
    print("Solve one problem and inspect the trace:")
    print(f"  codeloop solve --problems {problems} --scenario {scenario} \\")
    print("      --problem-id 101 --k 1 --n 2 --theta 0.8 --run-dir runs/demo-solve")
    print()
    print("Benchmark all three against their held-out tests:")
    print(f"  codeloop bench --problems {problems} --scenario {scenario} \\")
    print("      --k 1 --n 2 --theta 0.8 --audit --run-dir runs/demo-bench")
    print()
    print("Same run, but candidates actually execute in the sandbox harness:")
    print(f"  codeloop bench --problems {problems} --scenario {scenario} \\")
    print("      --k 1 --n 2 --theta 0.8 --executor sandbox --run-dir runs/demo-sandbox")


if __name__ == "__main__":
    main()
