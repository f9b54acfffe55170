"""Chat-completion client: an OpenAI-compatible HTTP backend plus a scripted
deterministic backend for tests. Every call can be recorded into a transcript."""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

ROLES = ("system", "user", "assistant")

KIND_HTTP = "http_openai_compatible"
KIND_SCRIPTED = "scripted"

_RETRYABLE_STATUS = frozenset({429}) | frozenset(range(500, 600))


class ProviderError(RuntimeError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ScriptExhaustedError(ProviderError):
    """No scripted entry matched the last user message."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.content and self.role != "assistant":
            raise ValueError("only assistant placeholders may have empty content")


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[-1].role != "user":
            raise ValueError("last message must have role 'user'")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @property
    def last_user_content(self) -> str:
        for message in reversed(self.messages):
            if message.role == "user":
                return message.content
        return ""


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0
    retries: int = 0


class ScriptState:
    """Ordered (substring matcher, reply) entries, each usable exactly once.

    Matching scans entries in order against the last user message; the first
    unconsumed match wins. Thread-safe so fan-out stages can share a script.
    """

    def __init__(self, entries: list[tuple[str, str]]):
        if not entries:
            raise ValueError("script must be non-empty")
        self._entries = list(entries)
        self._used = [False] * len(entries)
        self._lock = threading.Lock()
        self.call_count = 0

    def consume(self, message: str) -> str:
        with self._lock:
            self.call_count += 1
            for index, (matcher, reply) in enumerate(self._entries):
                if not self._used[index] and matcher in message:
                    self._used[index] = True
                    return reply
        raise ScriptExhaustedError(
            f"no unused script entry matches message starting {message[:80]!r}"
        )

    @property
    def remaining(self) -> int:
        with self._lock:
            return self._used.count(False)


@dataclass
class ProviderConfig:
    kind: str
    base_url: str = ""
    api_key_env_var: str = ""
    request_timeout_ms: int = 60000
    max_retries: int = 2
    retry_backoff_ms: int = 250
    script: ScriptState | None = None

    def __post_init__(self):
        if self.kind not in (KIND_HTTP, KIND_SCRIPTED):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == KIND_HTTP and not self.base_url:
            raise ValueError("http provider requires base_url")
        if self.request_timeout_ms <= 0 or self.retry_backoff_ms <= 0:
            raise ValueError("timeouts and backoff must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def scripted_provider(script: list[tuple[str, str]]) -> ProviderConfig:
    """A deterministic provider answering from an ordered single-use script."""
    return ProviderConfig(kind=KIND_SCRIPTED, script=ScriptState(script))


@dataclass(frozen=True)
class TranscriptEntry:
    stage_label: str
    request: CompletionRequest
    response: CompletionResponse
    attempt_index: int = 0

    def __post_init__(self):
        if not self.stage_label:
            raise ValueError("stage_label must be non-empty")


def complete(
    provider: ProviderConfig,
    request: CompletionRequest,
    *,
    transcript: list[TranscriptEntry] | None = None,
    stage_label: str = "llm",
    attempt_index: int = 0,
) -> CompletionResponse:
    """Run one chat completion, appending exactly one transcript entry.

    HTTP transport retries transient failures (timeouts, 429, 5xx) up to
    max_retries with exponential backoff; other 4xx statuses fail
    immediately. Scripted transport is instantaneous and deterministic.
    """
    if provider.kind == KIND_SCRIPTED:
        if provider.script is None:
            raise ProviderError("scripted provider has no script loaded")
        text = provider.script.consume(request.last_user_content)
        response = CompletionResponse(text=text)
    else:
        response = _complete_http(provider, request)

    if transcript is not None:
        transcript.append(
            TranscriptEntry(
                stage_label=stage_label,
                request=request,
                response=response,
                attempt_index=attempt_index,
            )
        )
    return response


def _complete_http(provider: ProviderConfig, request: CompletionRequest) -> CompletionResponse:
    url = provider.base_url.rstrip("/") + "/chat/completions"
    payload = {
        "model": request.model_id,
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    if request.stop_sequences:
        payload["stop"] = list(request.stop_sequences)

    headers = {"Content-Type": "application/json"}
    if provider.api_key_env_var:
        api_key = os.environ.get(provider.api_key_env_var, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

    started = time.monotonic()
    attempt = 0
    while True:
        status: int | None = None
        failure = ""
        try:
            http_response = requests.post(
                url,
                json=payload,
                headers=headers,
                timeout=provider.request_timeout_ms / 1000.0,
            )
            status = http_response.status_code
            if status == 200:
                return _parse_http_response(http_response, started, retries=attempt)
            failure = f"HTTP {status}"
            if status not in _RETRYABLE_STATUS:
                raise ProviderError(f"provider returned {failure}", status=status)
        except requests.RequestException as exc:
            failure = f"request failed: {exc}"

        if attempt >= provider.max_retries:
            raise ProviderError(
                f"retries exhausted after {attempt + 1} attempts; last error: {failure}",
                status=status,
            )
        time.sleep(provider.retry_backoff_ms * (2**attempt) / 1000.0)
        attempt += 1


def _parse_http_response(
    http_response: requests.Response, started: float, retries: int
) -> CompletionResponse:
    try:
        data = http_response.json()
        text = data["choices"][0]["message"]["content"] or ""
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"malformed completion response: {exc}") from exc
    usage = data.get("usage") or {}
    return CompletionResponse(
        text=text,
        prompt_tokens=int(usage.get("prompt_tokens", 0)),
        completion_tokens=int(usage.get("completion_tokens", 0)),
        latency_ms=int((time.monotonic() - started) * 1000),
        retries=retries,
    )


@dataclass
class ModelEndpoint:
    """A provider plus the request defaults for one logical model role.

    temperature applies to every stage unless stage_temperatures overrides
    it for a specific stage label.
    """

    provider: ProviderConfig
    model_id: str
    temperature: float = 0.0
    max_tokens: int = 1024
    stage_temperatures: dict[str, float] = field(default_factory=dict)

    def ask(
        self,
        prompt: str,
        *,
        transcript: list[TranscriptEntry] | None = None,
        stage_label: str,
        attempt_index: int = 0,
    ) -> str:
        request = CompletionRequest(
            model_id=self.model_id,
            messages=(ChatMessage("user", prompt),),
            temperature=self.stage_temperatures.get(stage_label, self.temperature),
            max_tokens=self.max_tokens,
        )
        return complete(
            self.provider,
            request,
            transcript=transcript,
            stage_label=stage_label,
            attempt_index=attempt_index,
        ).text


@dataclass
class ModelPair:
    """The two logical endpoints: a reasoning model and a coding model."""

    reasoning: ModelEndpoint
    coding: ModelEndpoint


def transcript_entry_to_dict(entry: TranscriptEntry) -> dict:
    return {
        "stage_label": entry.stage_label,
        "attempt_index": entry.attempt_index,
        "request": {
            "model_id": entry.request.model_id,
            "messages": [
                {"role": m.role, "content": m.content} for m in entry.request.messages
            ],
            "temperature": entry.request.temperature,
            "max_tokens": entry.request.max_tokens,
            "stop_sequences": list(entry.request.stop_sequences),
        },
        "response": {
            "text": entry.response.text,
            "prompt_tokens": entry.response.prompt_tokens,
            "completion_tokens": entry.response.completion_tokens,
            "latency_ms": entry.response.latency_ms,
            "retries": entry.response.retries,
        },
    }


def write_transcript(path: str | Path, entries: list[TranscriptEntry]) -> None:
    """Persist a transcript as JSON Lines, one entry per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for entry in entries:
            handle.write(json.dumps(transcript_entry_to_dict(entry), sort_keys=True))
            handle.write("\n")
