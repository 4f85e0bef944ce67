"""Uniform chat-completion interface.

Two implementations share one contract: an OpenAI-compatible HTTP client and
a deterministic scripted backend (see ``scripted.py``). Every request carries
the tag of the operator that issued it (actor / critic / grad / agg / opt),
and backends keep per-tag token accounting.
"""

from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass

import httpx

from . import errors
from .types import BackendDescriptor

TAGS = ("actor", "critic", "grad", "agg", "opt")


@dataclass(frozen=True)
class ChatRequest:
    """Role-tagged messages plus sampling parameters and the operator tag."""

    messages: tuple[tuple[str, str], ...]  # (role, content) pairs
    temperature: float
    max_tokens: int
    tag: str

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.tag not in TAGS:
            raise ValueError(f"unknown operator tag {self.tag!r}")

    @property
    def system_text(self) -> str:
        return "\n".join(c for r, c in self.messages if r == "system")

    @property
    def user_text(self) -> str:
        return "\n".join(c for r, c in self.messages if r == "user")

    @property
    def full_text(self) -> str:
        return "\n".join(c for _, c in self.messages)


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.prompt_tokens + other.prompt_tokens,
                          self.completion_tokens + other.completion_tokens)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: TokenUsage
    latency_ms: int = 0


def estimate_tokens(text: str) -> int:
    """4-chars-per-token heuristic used when a backend reports no usage."""
    return max(1, math.ceil(len(text) / 4))


class UsageLedger:
    """Thread-safe per-tag token tally."""

    def __init__(self):
        self._lock = threading.Lock()
        self._by_tag: dict[str, TokenUsage] = {tag: TokenUsage() for tag in TAGS}
        self._calls: dict[str, int] = {tag: 0 for tag in TAGS}

    def record(self, tag: str, usage: TokenUsage) -> None:
        with self._lock:
            self._by_tag[tag] = self._by_tag[tag] + usage
            self._calls[tag] += 1

    def by_tag(self) -> dict[str, TokenUsage]:
        with self._lock:
            return dict(self._by_tag)

    def calls_by_tag(self) -> dict[str, int]:
        with self._lock:
            return dict(self._calls)

    def total(self) -> TokenUsage:
        with self._lock:
            out = TokenUsage()
            for usage in self._by_tag.values():
                out = out + usage
            return out


class Backend:
    """Shared surface: ``complete`` plus the usage ledger."""

    def __init__(self):
        self.usage = UsageLedger()

    def complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError


class HttpBackend(Backend):
    """OpenAI-compatible ``POST {base_url}/chat/completions`` client.

    Retries transport errors and HTTP 429/5xx with exponential backoff up to
    ``retry.max_attempts`` total requests; other 4xx failures (including
    401/403) are never retried. The API key is read from the environment
    variable named by the descriptor and is required before any network call.
    """

    def __init__(self, descriptor: BackendDescriptor,
                 transport: httpx.BaseTransport | None = None):
        super().__init__()
        self.descriptor = descriptor
        self._transport = transport
        self._client: httpx.Client | None = None
        self._client_lock = threading.Lock()
        self._semaphore = threading.BoundedSemaphore(max(1, descriptor.max_concurrency))

    def _get_client(self) -> httpx.Client:
        with self._client_lock:
            if self._client is None:
                self._client = httpx.Client(
                    base_url=self.descriptor.base_url,
                    timeout=self.descriptor.timeout_ms / 1000.0,
                    transport=self._transport,
                )
            return self._client

    def complete(self, request: ChatRequest) -> ChatResponse:
        api_key = os.environ.get(self.descriptor.api_key_env, "")
        if not api_key:
            raise errors.AuthError(
                f"environment variable {self.descriptor.api_key_env!r} is not set")

        body = {
            "model": self.descriptor.model,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Authorization": f"Bearer {api_key}"}
        retry = self.descriptor.retry
        start = time.monotonic()
        last_error: Exception | None = None
        timed_out = False
        rate_limited = False

        with self._semaphore:
            client = self._get_client()
            for attempt in range(retry.max_attempts):
                if attempt > 0:
                    time.sleep(retry.backoff_ms / 1000.0 * (2 ** (attempt - 1)))
                try:
                    response = client.post("/chat/completions", json=body,
                                           headers=headers)
                except httpx.TimeoutException as exc:
                    last_error, timed_out = exc, True
                    continue
                except httpx.TransportError as exc:
                    last_error = exc
                    continue

                status = response.status_code
                if status in (401, 403):
                    raise errors.AuthError(f"authentication rejected (HTTP {status})")
                if status == 429:
                    last_error = errors.RateLimited("HTTP 429")
                    rate_limited = True
                    continue
                if status >= 500:
                    last_error = errors.TransportError(f"HTTP {status}")
                    continue
                if status >= 400:
                    raise errors.TransportError(f"HTTP {status}: {response.text[:200]}")

                return self._parse_response(request, response, start)

        if timed_out:
            raise errors.TimeoutError(str(last_error)) from last_error
        if rate_limited:
            raise errors.RateLimited(
                f"still rate-limited after {retry.max_attempts} attempts")
        raise errors.TransportError(
            f"transport failed after {retry.max_attempts} attempts: {last_error}")

    def _parse_response(self, request: ChatRequest, response: httpx.Response,
                        start: float) -> ChatResponse:
        try:
            payload = response.json()
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise errors.TransportError(f"malformed completion payload: {exc}") from exc
        usage_payload = payload.get("usage") or {}
        usage = TokenUsage(
            prompt_tokens=int(usage_payload.get("prompt_tokens",
                                                estimate_tokens(request.full_text))),
            completion_tokens=int(usage_payload.get("completion_tokens",
                                                    estimate_tokens(text))),
        )
        self.usage.record(request.tag, usage)
        latency = int((time.monotonic() - start) * 1000)
        return ChatResponse(text=text, usage=usage, latency_ms=latency)


@dataclass
class RecordedCall:
    request: ChatRequest
    response: ChatResponse


class RecordingBackend(Backend):
    """Wraps another backend and records every exchange; used for the
    information-flow checks and call-count ledgers."""

    def __init__(self, inner: Backend):
        super().__init__()
        self.inner = inner
        self.calls: list[RecordedCall] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self.inner.complete(request)
        with self._lock:
            self.calls.append(RecordedCall(request, response))
        self.usage.record(request.tag, response.usage)
        return response

    def by_tag(self, tag: str) -> list[RecordedCall]:
        with self._lock:
            return [c for c in self.calls if c.request.tag == tag]

    def reset(self) -> None:
        with self._lock:
            self.calls.clear()


def complete(backend: Backend, request: ChatRequest) -> ChatResponse:
    """Functional form of ``Backend.complete``."""
    return backend.complete(request)


def make_backend(descriptor: BackendDescriptor) -> Backend:
    if descriptor.kind == "http":
        return HttpBackend(descriptor)
    from .scripted import ScriptedBackend

    return ScriptedBackend(descriptor)
