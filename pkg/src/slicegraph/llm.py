"""Pluggable chat-completion backends and structured-output parsing.

Three kinds: ``http`` talks to any OpenAI-compatible endpoint, ``mock``
serves caller-registered scripted responses, and ``replay`` replays a
recorded cassette and refuses to continue if prompts diverge from the
recording. Everything the test suites run uses mock or replay.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests

from slicegraph.domain import IntentLabel, SliceKind, ValidationError, canonical_json

API_KEY_ENV = "SLICEGRAPH_API_KEY"

ROLES = ("system", "user", "assistant")


class BackendError(RuntimeError):
    """Transport failure, exhausted retries, or cassette divergence."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValidationError(f"unknown chat role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValidationError(f"empty content for {self.role} message")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class BackendConfig:
    kind: str
    base_url: str | None = None
    model: str | None = None
    timeout_s: float = 30.0
    max_retries: int = 2
    cassette_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("http", "mock", "replay"):
            raise ValidationError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and (not self.base_url or not self.model):
            raise ValidationError("http backend requires base_url and model")
        if self.kind == "replay" and not self.cassette_path:
            raise ValidationError("replay backend requires cassette_path")


def prompt_digest(messages: Sequence[ChatMessage]) -> str:
    payload = canonical_json([m.to_dict() for m in messages])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class MockBackend:
    """Scripted responses matched against the last user message.

    Matchers are either substrings or predicates, checked in registration
    order; a responder may instead compute the reply from the message.
    Registration happens before runs start and is frozen thereafter.
    """

    def __init__(self, default_response: str | None = None):
        self._rules: list[tuple[Callable[[str], bool], str]] = []
        self._responders: list[Callable[[str], str | None]] = []
        self.default_response = default_response

    def register(self, matcher: str | Callable[[str], bool], response: str) -> None:
        if isinstance(matcher, str):
            needle = matcher
            self._rules.append((lambda text, needle=needle: needle in text, response))
        else:
            self._rules.append((matcher, response))

    def register_responder(self, responder: Callable[[str], str | None]) -> None:
        self._responders.append(responder)

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        last_user = _last_user_content(messages)
        for matcher, response in self._rules:
            if matcher(last_user):
                return response
        for responder in self._responders:
            response = responder(last_user)
            if response is not None:
                return response
        if self.default_response is not None:
            return self.default_response
        raise BackendError("no mock response matches the last user message")


class ReplayBackend:
    """Replays a recorded cassette, verifying prompt digests in order."""

    def __init__(self, cassette_path: str | Path):
        self._records: list[dict] = []
        self._cursor = 0
        path = Path(cassette_path)
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BackendError(f"cassette parse error at line {lineno}: {exc.msg}")
            if "prompt_digest" not in record or "response" not in record:
                raise BackendError(f"cassette record at line {lineno} missing fields")
            self._records.append(record)

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        if self._cursor >= len(self._records):
            raise BackendError("cassette exhausted")
        record = self._records[self._cursor]
        digest = prompt_digest(messages)
        if record["prompt_digest"] != digest:
            raise BackendError(
                f"cassette mismatch at record {self._cursor}: "
                f"expected {record['prompt_digest'][:12]}, got {digest[:12]}"
            )
        self._cursor += 1
        return record["response"]


def write_cassette(path: str | Path, pairs: Sequence[tuple[Sequence[ChatMessage], str]]) -> None:
    lines = [
        json.dumps({"prompt_digest": prompt_digest(messages), "response": response})
        for messages, response in pairs
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


class RecordingBackend:
    """Wraps another backend and records every exchange for later replay."""

    def __init__(self, inner):
        self.inner = inner
        self.pairs: list[tuple[tuple[ChatMessage, ...], str]] = []

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        response = self.inner.complete(messages)
        self.pairs.append((tuple(messages), response))
        return response

    def dump(self, path: str | Path) -> None:
        write_cassette(path, self.pairs)


class HttpBackend:
    """Minimal OpenAI-compatible chat-completions client."""

    def __init__(self, config: BackendConfig):
        self.config = config

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": self.config.model,
            "messages": [m.to_dict() for m in messages],
            "temperature": 0,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: Exception | None = None
        for _ in range(self.config.max_retries + 1):
            try:
                response = requests.post(
                    url, json=body, headers=headers, timeout=self.config.timeout_s
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code // 100 != 2:
                last_error = BackendError(f"HTTP {response.status_code}: {response.text[:200]}")
                continue
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                raise BackendError(f"malformed completion response: {exc}") from exc
        raise BackendError(f"backend unreachable after retries: {last_error}")


Backend = MockBackend | ReplayBackend | HttpBackend


def make_backend(config: BackendConfig) -> Backend:
    if config.kind == "mock":
        return MockBackend()
    if config.kind == "replay":
        return ReplayBackend(config.cassette_path)
    return HttpBackend(config)


def complete(backend: Backend, messages: Sequence[ChatMessage]) -> str:
    if not messages:
        raise ValidationError("messages must be non-empty")
    return backend.complete(messages)


def _last_user_content(messages: Sequence[ChatMessage]) -> str:
    for message in reversed(messages):
        if message.role == "user":
            return message.content
    return ""


# --- structured-output parsing ---------------------------------------------

class IntentParseError(ValueError):
    """kind is one of NoJson, MissingField, BadSliceName, BadValue."""

    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"{kind}{': ' + detail if detail else ''}")
        self.kind = kind
        self.detail = detail


_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")


def extract_json_object(text: str) -> dict | None:
    """First balanced JSON object in the text, fenced blocks included.

    One repair attempt strips trailing commas before retrying.
    """
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escape = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start : i + 1]
                    try:
                        return json.loads(candidate)
                    except json.JSONDecodeError:
                        repaired = _TRAILING_COMMA_RE.sub(r"\1", candidate)
                        try:
                            return json.loads(repaired)
                        except json.JSONDecodeError:
                            break
        start = text.find("{", start + 1)
    return None


def parse_intent(text: str) -> IntentLabel:
    """Extract an intent label from free-form model output."""
    data = extract_json_object(text)
    if data is None:
        raise IntentParseError("NoJson")
    for name in ("slice", "required_rate_mbps", "required_latency_ms"):
        if name not in data:
            raise IntentParseError("MissingField", name)
    try:
        kind = SliceKind.parse(str(data["slice"]))
    except ValidationError:
        raise IntentParseError("BadSliceName", str(data["slice"])) from None
    try:
        return IntentLabel(
            slice=kind,
            required_rate_mbps=float(data["required_rate_mbps"]),
            required_latency_ms=float(data["required_latency_ms"]),
        )
    except (TypeError, ValueError) as exc:
        raise IntentParseError("BadValue", str(exc)) from None


def parse_grant(text: str) -> tuple[SliceKind, float]:
    """Extract ``{slice, bandwidth_mhz}`` from single-shot baseline output."""
    data = extract_json_object(text)
    if data is None:
        raise IntentParseError("NoJson")
    for name in ("slice", "bandwidth_mhz"):
        if name not in data:
            raise IntentParseError("MissingField", name)
    try:
        kind = SliceKind.parse(str(data["slice"]))
    except ValidationError:
        raise IntentParseError("BadSliceName", str(data["slice"])) from None
    try:
        return kind, float(data["bandwidth_mhz"])
    except (TypeError, ValueError) as exc:
        raise IntentParseError("BadValue", str(exc)) from None
