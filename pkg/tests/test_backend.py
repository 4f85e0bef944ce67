import json
import threading

import httpx
import pytest

from textmarl import errors
from textmarl.backend import (
    ChatRequest,
    HttpBackend,
    RecordingBackend,
    TokenUsage,
    estimate_tokens,
    make_backend,
)
from textmarl.scripted import ScriptedBackend
from textmarl.types import BackendDescriptor, RetryPolicy

KEY_ENV = "TEXTMARL_TEST_KEY"


def http_descriptor(**kw):
    args = dict(kind="http", base_url="http://llm.test/v1", model="test-model",
                api_key_env=KEY_ENV,
                retry=RetryPolicy(max_attempts=3, backoff_ms=1))
    args.update(kw)
    return BackendDescriptor(**args)


def chat_request(text="hello", tag="actor"):
    return ChatRequest(messages=(("system", "sys"), ("user", text)),
                       temperature=0.7, max_tokens=64, tag=tag)


def ok_payload(text="fine"):
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 10, "completion_tokens": 5},
    }


class Responder:
    """Mock chat-completions server with a scripted status sequence."""

    def __init__(self, statuses, text="fine"):
        self.statuses = list(statuses)
        self.text = text
        self.requests = []
        self.lock = threading.Lock()

    def __call__(self, request: httpx.Request) -> httpx.Response:
        with self.lock:
            self.requests.append(request)
            status = self.statuses.pop(0) if self.statuses else 200
        if status == 200:
            return httpx.Response(200, json=ok_payload(self.text))
        return httpx.Response(status, json={"error": f"status {status}"})


def backend_with(responder, monkeypatch, **kw):
    monkeypatch.setenv(KEY_ENV, "sk-test")
    return HttpBackend(http_descriptor(**kw),
                       transport=httpx.MockTransport(responder))


class TestChatRequest:
    def test_requires_messages(self):
        with pytest.raises(ValueError):
            ChatRequest(messages=(), temperature=0.2, max_tokens=10, tag="actor")

    def test_rejects_unknown_tag(self):
        with pytest.raises(ValueError):
            chat_request(tag="oracle")

    def test_rejects_negative_temperature(self):
        with pytest.raises(ValueError):
            ChatRequest(messages=(("user", "x"),), temperature=-1,
                        max_tokens=10, tag="actor")


class TestHttpBackend:
    def test_missing_key_is_autherror_before_any_network_call(self, monkeypatch):
        monkeypatch.delenv(KEY_ENV, raising=False)
        responder = Responder([200])
        backend = HttpBackend(http_descriptor(),
                              transport=httpx.MockTransport(responder))
        with pytest.raises(errors.AuthError):
            backend.complete(chat_request())
        assert responder.requests == []

    def test_success_parses_content_and_usage(self, monkeypatch):
        backend = backend_with(Responder([200], text="the answer"), monkeypatch)
        response = backend.complete(chat_request())
        assert response.text == "the answer"
        assert response.usage == TokenUsage(10, 5)

    def test_request_body_shape(self, monkeypatch):
        responder = Responder([200])
        backend = backend_with(responder, monkeypatch)
        backend.complete(chat_request("ping"))
        sent = responder.requests[0]
        assert sent.url.path.endswith("/chat/completions")
        body = json.loads(sent.content)
        assert body["model"] == "test-model"
        assert body["messages"][1] == {"role": "user", "content": "ping"}
        assert sent.headers["authorization"] == "Bearer sk-test"

    def test_429_then_200_succeeds_within_max_attempts(self, monkeypatch):
        responder = Responder([429, 200])
        backend = backend_with(responder, monkeypatch)
        response = backend.complete(chat_request())
        assert response.text == "fine"
        assert len(responder.requests) == 2

    def test_401_fails_immediately_with_single_request(self, monkeypatch):
        responder = Responder([401])
        backend = backend_with(responder, monkeypatch)
        with pytest.raises(errors.AuthError):
            backend.complete(chat_request())
        assert len(responder.requests) == 1

    def test_never_exceeds_max_attempts(self, monkeypatch):
        responder = Responder([500] * 10)
        backend = backend_with(responder, monkeypatch)
        with pytest.raises(errors.TransportError):
            backend.complete(chat_request())
        assert len(responder.requests) == 3

    def test_429_exhaustion_raises_ratelimited(self, monkeypatch):
        responder = Responder([429] * 10)
        backend = backend_with(responder, monkeypatch)
        with pytest.raises(errors.RateLimited):
            backend.complete(chat_request())
        assert len(responder.requests) == 3

    def test_plain_4xx_never_retried(self, monkeypatch):
        responder = Responder([400])
        backend = backend_with(responder, monkeypatch)
        with pytest.raises(errors.TransportError):
            backend.complete(chat_request())
        assert len(responder.requests) == 1

    def test_timeout_raises_timeout_error(self, monkeypatch):
        monkeypatch.setenv(KEY_ENV, "sk-test")
        calls = []

        def raise_timeout(request):
            calls.append(request)
            raise httpx.ReadTimeout("too slow")

        backend = HttpBackend(http_descriptor(retry=RetryPolicy(2, 1)),
                              transport=httpx.MockTransport(raise_timeout))
        with pytest.raises(errors.TimeoutError):
            backend.complete(chat_request())
        assert len(calls) == 2

    def test_malformed_payload(self, monkeypatch):
        monkeypatch.setenv(KEY_ENV, "sk-test")

        def bad_payload(request):
            return httpx.Response(200, json={"unexpected": True})

        backend = HttpBackend(http_descriptor(retry=RetryPolicy(1, 1)),
                              transport=httpx.MockTransport(bad_payload))
        with pytest.raises(errors.TransportError):
            backend.complete(chat_request())


class TestUsageLedger:
    def test_per_tag_accounting_sums_to_total(self, piston_backend):
        from textmarl.scripted import PISTON_EXPERT_POLICY

        for tag, text in (("actor", "- Language Policy: " + PISTON_EXPERT_POLICY
                           + "\n- Local Observation: you are piston 0 of 2. "
                             "your height: 0.50. left neighbor height: wall. "
                             "right neighbor height: 0.50. ball: not visible."),
                          ("grad", "- Language Credits: none\n- Prior Policy: x"),
                          ("agg", "Gradient 1: no change"),
                          ("opt", "- Aggregated Gradients: no change\n"
                                  "- Prior Policy: x")):
            piston_backend.complete(chat_request(text, tag=tag))
        by_tag = piston_backend.usage.by_tag()
        total = piston_backend.usage.total()
        assert sum(u.prompt_tokens for u in by_tag.values()) == total.prompt_tokens
        assert sum(u.completion_tokens for u in by_tag.values()) == total.completion_tokens
        assert piston_backend.usage.calls_by_tag()["actor"] == 1

    def test_estimate_tokens(self):
        assert estimate_tokens("") == 1
        assert estimate_tokens("abcd" * 10) == 10


class TestScriptedDeterminism:
    def test_identical_responses_for_identical_requests(self, piston_backend):
        request = chat_request(
            "- Language Policy: p\n- Local Observation: you are piston 0 of 2. "
            "your height: 0.50. left neighbor height: wall. right neighbor "
            "height: 0.50. the ball is 1 cell to your right, stationary.")
        first = piston_backend.complete(request)
        second = piston_backend.complete(request)
        assert first.text == second.text
        assert first.usage == second.usage

    def test_actor_request_with_ball_one_left_completes_down(self, piston_backend):
        from textmarl.scripted import PISTON_EXPERT_POLICY

        request = chat_request(
            f"- Language Policy: {PISTON_EXPERT_POLICY}\n"
            "- Local Observation: you are piston 2 of 5. your height: 0.80. "
            "left neighbor height: 0.50. right neighbor height: 0.50. "
            "the ball is 1 cell to your left, moving left at 0.10 cells/step.")
        assert "Action: down" in piston_backend.complete(request).text

    def test_unhandled_tag(self):
        backend = ScriptedBackend(BackendDescriptor(kind="scripted",
                                                    script_name="piston_expert"))
        with pytest.raises(errors.UnhandledTagError):
            backend.complete(chat_request(tag="critic"))


class TestRecordingBackend:
    def test_records_requests_by_tag(self, piston_backend):
        recorder = RecordingBackend(piston_backend)
        recorder.complete(chat_request(
            "- Language Policy: p\n- Local Observation: you are piston 0 of 1. "
            "your height: 0.50. left neighbor height: wall. right neighbor "
            "height: wall. ball: not visible."))
        assert len(recorder.by_tag("actor")) == 1
        assert recorder.by_tag("critic") == []


def test_make_backend_dispatch():
    scripted = make_backend(BackendDescriptor(kind="scripted",
                                              script_name="piston_expert"))
    assert isinstance(scripted, ScriptedBackend)
    http = make_backend(http_descriptor())
    assert isinstance(http, HttpBackend)
