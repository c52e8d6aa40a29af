"""Subprocess driver for the harness test suite. Every check goes through the
real one-shot protocol: spawn, write one request line, read one reply line."""
import json
import subprocess
import sys
from pathlib import Path

HARNESS_CMD = [sys.executable, "-m", "codeloop_harness"]
GOLDEN_DIR = Path(__file__).parent / "golden"


def run_harness(payload, timeout_s=30.0):
    """payload is a request dict, or a raw string written to stdin verbatim."""
    raw = payload if isinstance(payload, str) else json.dumps(payload)
    return subprocess.run(
        HARNESS_CMD,
        input=raw + "\n",
        capture_output=True,
        text=True,
        timeout=timeout_s,
    )


def reply_of(proc):
    """The single protocol line, parsed. Asserts stdout holds nothing else."""
    lines = [line for line in proc.stdout.splitlines() if line.strip()]
    assert len(lines) == 1, f"expected exactly one stdout line, got {proc.stdout!r}"
    return json.loads(lines[0])


def run_request(solution, test, timeout_ms=5000):
    return run_harness(
        {
            "v": 1,
            "mode": "run",
            "solution_source": solution,
            "test_source": test,
            "timeout_ms": timeout_ms,
        }
    )


def tree_fingerprint(source):
    proc = run_harness({"v": 1, "mode": "normalize", "test_source": source})
    assert proc.returncode == 0
    reply = reply_of(proc)
    assert reply["status"] == "ok", reply
    return reply["tree_fingerprint"]
