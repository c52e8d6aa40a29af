"""One-shot sandbox runner.

Reads exactly one JSON request from stdin and writes exactly one JSON line to
stdout, then exits 0. Two modes:

  run        execute solution_source in a fresh namespace, then test_source in
             the same namespace. An assertion failure reports status "fail",
             any other exception "error" with its class, and an internal alarm
             turns a hung candidate into status "timeout" at timeout_ms even
             if the parent never kills us.
  normalize  parse test_source and hash its canonical syntax-tree dump
             (positions and comments gone), so reformatted duplicates map to
             the same fingerprint.

Candidate prints are captured into the response message and can never corrupt
the protocol line. A malformed request exits non-zero with no response, which
parents classify as a crash.
"""
from __future__ import annotations

import ast
import hashlib
import io
import json
import signal
import sys
import time
import traceback
from contextlib import redirect_stderr, redirect_stdout

PROTOCOL_VERSION = 1
MAX_CAPTURE_BYTES = 4096
TRACEBACK_FRAMES = 5
_SOLUTION_FILE = "<solution>"
_TESTS_FILE = "<tests>"


class _Timeout(BaseException):
    """Raised by the alarm handler; BaseException so candidate except-Exception
    blocks cannot swallow it."""


def _alarm_handler(signum, frame):
    raise _Timeout()


def _truncate(text: str) -> str:
    if len(text) <= MAX_CAPTURE_BYTES:
        return text
    return text[:MAX_CAPTURE_BYTES]


def _frame_tail(exc: BaseException) -> list[str]:
    frames = traceback.extract_tb(exc.__traceback__)
    candidate_frames = [f for f in frames if f.filename in (_SOLUTION_FILE, _TESTS_FILE)]
    if not candidate_frames:
        candidate_frames = frames
    return [f"{f.filename}:{f.lineno} in {f.name}" for f in candidate_frames[-TRACEBACK_FRAMES:]]


def _failure_message(exc: BaseException, captured: str) -> str:
    text = f"{type(exc).__name__}: {exc}".rstrip()
    if captured:
        text += "\n--- captured output ---\n" + captured
    return _truncate(text)


def _respond(payload: dict) -> None:
    payload["v"] = PROTOCOL_VERSION
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def _normalize(request: dict) -> dict:
    source = request.get("test_source", "")
    started = time.monotonic()
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        return {
            "status": "error",
            "error_class": "SyntaxError",
            "message": _truncate(str(exc)),
            "duration_ms": (time.monotonic() - started) * 1000.0,
        }
    canonical = ast.dump(tree, include_attributes=False)
    digest = hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:32]
    return {
        "status": "ok",
        "tree_fingerprint": f"ast:{digest}",
        "duration_ms": (time.monotonic() - started) * 1000.0,
    }


def _run(request: dict) -> dict:
    solution_source = request.get("solution_source", "")
    test_source = request.get("test_source", "")
    timeout_ms = int(request.get("timeout_ms") or 0)
    buffer = io.StringIO()
    started = time.monotonic()

    def done(status: str, exc: BaseException | None = None) -> dict:
        captured = _truncate(buffer.getvalue())
        out: dict = {"status": status, "duration_ms": (time.monotonic() - started) * 1000.0}
        if status == "timeout":
            text = f"timed out after {timeout_ms}ms"
            if captured:
                text += "\n--- captured output ---\n" + captured
            out["error_class"] = "timeout"
            out["message"] = _truncate(text)
            return out
        if exc is None:
            if captured:
                out["message"] = captured
            return out
        out["error_class"] = type(exc).__name__
        out["message"] = _failure_message(exc, captured)
        out["traceback_tail"] = _frame_tail(exc)
        return out

    try:
        solution_code = compile(solution_source, _SOLUTION_FILE, "exec")
    except SyntaxError as exc:
        return done("error", exc)
    namespace: dict = {"__name__": "__main__"}

    if timeout_ms > 0:
        signal.signal(signal.SIGALRM, _alarm_handler)
        signal.setitimer(signal.ITIMER_REAL, timeout_ms / 1000.0)
    try:
        with redirect_stdout(buffer), redirect_stderr(buffer):
            exec(solution_code, namespace)
            test_code = compile(test_source, _TESTS_FILE, "exec")
            exec(test_code, namespace)
    except _Timeout:
        return done("timeout")
    except AssertionError as exc:
        return done("fail", exc)
    except SyntaxError as exc:
        return done("error", exc)
    except Exception as exc:
        return done("error", exc)
    except BaseException as exc:
        # SystemExit and friends from candidate code
        return done("error", exc)
    finally:
        if timeout_ms > 0:
            signal.setitimer(signal.ITIMER_REAL, 0)
    return done("pass")


def main() -> int:
    raw = sys.stdin.read()
    try:
        request = json.loads(raw)
        if not isinstance(request, dict):
            raise ValueError("request must be a JSON object")
        if request.get("v") != PROTOCOL_VERSION:
            raise ValueError(f"unsupported protocol version: {request.get('v')!r}")
        mode = request["mode"]
        if mode not in ("run", "normalize"):
            raise ValueError(f"unknown mode: {mode!r}")
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"bad request: {exc}", file=sys.stderr)
        return 2
    if mode == "normalize":
        _respond(_normalize(request))
    else:
        _respond(_run(request))
    return 0


if __name__ == "__main__":
    sys.exit(main())
