"""Text-generation backends.

Two kinds: an HTTP chat endpoint for live runs and a scripted mock that replays
canned responses from a scenario file. The mock keys responses by
(problem_id, iteration, sample_index), which makes whole runs replayable
byte for byte.
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

logger = logging.getLogger(__name__)

BACKEND_KINDS = ("http-chat", "scripted-mock")
DEFAULT_API_KEY_ENV = "CODELOOP_API_KEY"
_HTTP_TRANSPORT_RETRIES = 3
_HTTP_TIMEOUT_S = 120.0


class BackendError(RuntimeError):
    pass


class BackendUnavailableError(BackendError):
    """The backend cannot serve a request; fatal for the current iteration."""


@dataclass(frozen=True)
class BackendDescriptor:
    backend_id: str
    kind: str
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    scenario_path: str | None = None
    request_parallelism: int = 4
    retry_budget: int = 1

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind: {self.kind!r}")
        if self.kind == "http-chat" and not self.endpoint:
            raise ValueError("http-chat backend requires an endpoint")
        if self.kind == "scripted-mock" and not self.scenario_path:
            raise ValueError("scripted-mock backend requires a scenario_path")
        if self.request_parallelism < 1:
            raise ValueError("request_parallelism must be >= 1")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")

    def redacted(self) -> dict:
        """Manifest-safe view: names the key env var, never its value."""
        return {
            "backend_id": self.backend_id,
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model": self.model,
            "api_key_env": self.api_key_env,
            "scenario_path": self.scenario_path,
            "request_parallelism": self.request_parallelism,
            "retry_budget": self.retry_budget,
        }


@dataclass(frozen=True)
class BackendResponse:
    text: str
    tokens: int | None = None


class GenerationBackend(Protocol):
    descriptor: BackendDescriptor

    def generate(
        self, problem_id: str, iteration: int, sample_index: int, prompt: str, temperature: float
    ) -> BackendResponse: ...


class ScriptedMockBackend:
    """Replays responses from a JSON-lines scenario file.

    Each record: {"problem_id": ..., "iteration": ..., "sample_index": ...,
    "response": ..., "tokens": optional}. A missing key raises
    BackendUnavailableError, which the loop reports as a partial run.
    """

    def __init__(self, descriptor: BackendDescriptor) -> None:
        self.descriptor = descriptor
        self._responses: dict[tuple[str, int, int], BackendResponse] = {}
        path = Path(descriptor.scenario_path or "")
        if not path.exists():
            raise BackendError(f"scenario file not found: {path}")
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (str(rec["problem_id"]), int(rec["iteration"]), int(rec["sample_index"]))
                resp = BackendResponse(text=rec["response"], tokens=rec.get("tokens"))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise BackendError(f"bad scenario record at {path}:{lineno}: {exc}") from exc
            self._responses[key] = resp

    def generate(
        self, problem_id: str, iteration: int, sample_index: int, prompt: str, temperature: float
    ) -> BackendResponse:
        key = (problem_id, iteration, sample_index)
        try:
            return self._responses[key]
        except KeyError:
            raise BackendUnavailableError(
                f"scenario has no record for problem={problem_id} iteration={iteration} sample={sample_index}"
            ) from None


class HttpChatBackend:
    """Minimal chat-completions client: single user message, no streaming."""

    def __init__(self, descriptor: BackendDescriptor, session: requests.Session | None = None) -> None:
        self.descriptor = descriptor
        self._session = session or requests.Session()
        self._api_key = os.environ.get(descriptor.api_key_env, "")
        if not self._api_key:
            logger.warning("env var %s is empty; sending unauthenticated requests", descriptor.api_key_env)

    def generate(
        self, problem_id: str, iteration: int, sample_index: int, prompt: str, temperature: float
    ) -> BackendResponse:
        payload = {
            "model": self.descriptor.model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        last_error: Exception | None = None
        for attempt in range(_HTTP_TRANSPORT_RETRIES):
            try:
                resp = self._session.post(
                    self.descriptor.endpoint, json=payload, headers=headers, timeout=_HTTP_TIMEOUT_S
                )
                if resp.status_code >= 500:
                    raise BackendError(f"server error {resp.status_code}")
                if resp.status_code != 200:
                    raise BackendUnavailableError(f"backend returned {resp.status_code}: {resp.text[:200]}")
                return self._parse(resp.json())
            except (requests.RequestException, BackendError) as exc:
                if isinstance(exc, BackendUnavailableError):
                    raise
                last_error = exc
                time.sleep(2**attempt * 0.5)
        raise BackendUnavailableError(f"backend unreachable after {_HTTP_TRANSPORT_RETRIES} attempts: {last_error}")

    @staticmethod
    def _parse(body: dict) -> BackendResponse:
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailableError(f"malformed chat response: {exc}") from exc
        usage = body.get("usage") or {}
        tokens = usage.get("completion_tokens")
        if not isinstance(tokens, int):
            tokens = None
        return BackendResponse(text=text, tokens=tokens)


def approximate_tokens(text: str) -> int:
    """Fallback accounting when the backend reports no usage."""
    return max(1, len(text.encode("utf-8")) // 4)


def build_backend(descriptor: BackendDescriptor) -> GenerationBackend:
    if descriptor.kind == "scripted-mock":
        return ScriptedMockBackend(descriptor)
    return HttpChatBackend(descriptor)
