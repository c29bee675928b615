from __future__ import annotations

import json
import threading
from decimal import Decimal
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
import requests

from leakpatch.gateway import (
    AuthFailure,
    CompletionExchange,
    CostLedger,
    GatewayTimeout,
    HttpChatBackend,
    ModelConfig,
    ProtocolError,
    RateLimited,
    ReplayBackend,
    ReplayEntry,
    ReplayMismatch,
    ReplayExhausted,
    best_of_select,
    complete,
    record_cost,
    request_fingerprint,
    scrub_secrets,
)
from leakpatch.prompts import ConversationContext, Role


def make_context(budget=10_000):
    ctx = ConversationContext(token_budget=budget)
    ctx.add(Role.SYSTEM, "You are terse.")
    ctx.add(Role.USER, "int f(int x) { return x; }")
    return ctx


# ---------------------------------------------------------------------------
# config


def test_model_config_defaults_and_validation():
    config = ModelConfig(model_id="gpt-4-0613")
    assert config.temperature == 1.0
    assert config.max_tokens == 2048
    assert config.best_of == 1
    with pytest.raises(ValueError):
        ModelConfig(model_id="")
    with pytest.raises(ValueError):
        ModelConfig(model_id="m", max_tokens=0)
    with pytest.raises(ValueError):
        ModelConfig(model_id="m", best_of=0)


def test_model_config_prices_become_exact_decimals():
    config = ModelConfig(model_id="m", price_in="0.03", price_out=0.06)
    assert config.price_in == Decimal("0.03")
    assert config.price_out == Decimal("0.06")


def test_model_config_from_dict_ignores_unknown_keys():
    config = ModelConfig.from_dict(
        {"model_id": "m", "temperature": 0.2, "note": "ignored"}
    )
    assert config.temperature == 0.2


# ---------------------------------------------------------------------------
# fingerprints


def test_fingerprint_depends_on_model_and_messages():
    messages = (("system", "a"), ("user", "b"))
    base = request_fingerprint("m1", messages)
    assert base == request_fingerprint("m1", messages)
    assert base != request_fingerprint("m2", messages)
    assert base != request_fingerprint("m1", (("system", "a"), ("user", "c")))
    assert base != request_fingerprint("m1", (("user", "b"), ("system", "a")))


def test_fingerprint_frozen_value():
    # pinned so scripts recorded today replay tomorrow
    got = request_fingerprint("gpt-4-0613", (("system", "s"), ("user", "u")))
    assert got == "e82571465eb798aa6031ab6776118d6f7bfd51e4ef9b4b6f15386cfe0eed64c3"


# ---------------------------------------------------------------------------
# replay backend


def test_replay_serves_in_order_and_exhausts():
    backend = ReplayBackend([
        ReplayEntry("first", 10, 2),
        ReplayEntry("second", 11, 3),
    ])
    config = ModelConfig(model_id="m")
    assert backend.complete(config, (("system", "s"),)) == ("first", 10, 2)
    assert backend.remaining == 1
    assert backend.complete(config, (("system", "s"),)) == ("second", 11, 3)
    with pytest.raises(ReplayExhausted):
        backend.complete(config, (("system", "s"),))


def test_replay_checks_fingerprints_when_present():
    messages = (("system", "s"), ("user", "u"))
    good = request_fingerprint("m", messages)
    backend = ReplayBackend([ReplayEntry("ok", 1, 1, fingerprint=good)])
    assert backend.complete(ModelConfig(model_id="m"), messages)[0] == "ok"

    backend = ReplayBackend([ReplayEntry("ok", 1, 1, fingerprint=good)])
    with pytest.raises(ReplayMismatch):
        backend.complete(ModelConfig(model_id="m"), (("system", "s"), ("user", "x")))


def test_replay_script_round_trip():
    script = json.dumps([
        {"fingerprint": None, "response_text": "r1", "prompt_tokens": 5, "completion_tokens": 7},
        {"response_text": "r2", "prompt_tokens": 1, "completion_tokens": 1},
    ])
    backend = ReplayBackend.from_script(script)
    assert backend.remaining == 2
    text, pt, ct = backend.complete(ModelConfig(model_id="m"), (("system", "s"),))
    assert (text, pt, ct) == ("r1", 5, 7)


# ---------------------------------------------------------------------------
# http backend against a local stub server


class _StubHandler(BaseHTTPRequestHandler):
    script: list = []
    seen: list = []

    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        type(self).seen.append(
            {"path": self.path, "auth": self.headers.get("Authorization"), "body": body}
        )
        status, payload = type(self).script.pop(0)
        raw = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    _StubHandler.script = []
    _StubHandler.seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1", _StubHandler
    server.shutdown()


def completion_payload(text="patched", pt=12, ct=5):
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": pt, "completion_tokens": ct},
    }


def test_http_backend_speaks_the_wire_format(stub_server, monkeypatch):
    base_url, handler = stub_server
    handler.script.append((200, completion_payload()))
    monkeypatch.setenv("LLM_API_KEY", "sk-test-123")

    config = ModelConfig(model_id="gpt-4-0613", temperature=1.0, max_tokens=2048, top_p=1.0)
    backend = HttpChatBackend(base_url)
    exchange = complete(backend, config, make_context())

    assert exchange.response_text == "patched"
    assert exchange.prompt_tokens == 12
    assert exchange.completion_tokens == 5
    assert exchange.latency_s >= 0

    (request,) = handler.seen
    assert request["path"] == "/v1/chat/completions"
    assert request["auth"] == "Bearer sk-test-123"
    body = request["body"]
    assert body["model"] == "gpt-4-0613"
    assert body["temperature"] == 1.0
    assert body["max_tokens"] == 2048
    assert body["top_p"] == 1.0
    assert "top_k" not in body  # unsupported knobs are omitted, not guessed
    assert body["messages"][0] == {"role": "system", "content": "You are terse."}
    assert body["messages"][1]["role"] == "user"


def test_http_backend_omits_auth_when_env_unset(stub_server, monkeypatch):
    base_url, handler = stub_server
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    handler.script.append((200, completion_payload()))
    HttpChatBackend(base_url).complete(ModelConfig(model_id="m"), (("system", "s"),))
    assert handler.seen[0]["auth"] is None


def test_http_backend_estimates_tokens_when_usage_missing(stub_server):
    base_url, handler = stub_server
    handler.script.append((200, {"choices": [{"message": {"content": "abcdefgh"}}]}))
    text, pt, ct = HttpChatBackend(base_url).complete(
        ModelConfig(model_id="m"), (("system", "abcd"), ("user", "efgh"))
    )
    assert text == "abcdefgh"
    assert pt == 2  # 8 bytes / 4
    assert ct == 2


def test_http_backend_retries_rate_limit_then_succeeds(stub_server):
    base_url, handler = stub_server
    handler.script.extend([(429, {}), (200, completion_payload("ok"))])
    naps = []
    backend = HttpChatBackend(base_url, sleep=naps.append)
    text, _, _ = backend.complete(ModelConfig(model_id="m"), (("system", "s"),))
    assert text == "ok"
    assert naps == [1.0]


def test_http_backend_retry_budget_is_three_with_exponential_backoff(stub_server):
    base_url, handler = stub_server
    handler.script.extend([(429, {}), (429, {}), (429, {})])
    naps = []
    backend = HttpChatBackend(base_url, sleep=naps.append)
    with pytest.raises(RateLimited):
        backend.complete(ModelConfig(model_id="m"), (("system", "s"),))
    assert naps == [1.0, 2.0]
    assert len(handler.seen) == 3


def test_http_backend_auth_failure_is_not_retried(stub_server):
    base_url, handler = stub_server
    handler.script.append((401, {"error": "bad key"}))
    with pytest.raises(AuthFailure):
        HttpChatBackend(base_url).complete(ModelConfig(model_id="m"), (("system", "s"),))
    assert len(handler.seen) == 1


def test_http_backend_server_errors_retried_then_raised(stub_server):
    base_url, handler = stub_server
    handler.script.extend([(500, {}), (502, {}), (503, {})])
    backend = HttpChatBackend(base_url, sleep=lambda _: None)
    with pytest.raises(ProtocolError):
        backend.complete(ModelConfig(model_id="m"), (("system", "s"),))


def test_http_backend_malformed_payload(stub_server):
    base_url, handler = stub_server
    handler.script.append((200, {"unexpected": True}))
    with pytest.raises(ProtocolError):
        HttpChatBackend(base_url).complete(ModelConfig(model_id="m"), (("system", "s"),))


def test_http_backend_connection_refused_becomes_timeout():
    backend = HttpChatBackend("http://127.0.0.1:1/v1", attempts=2, sleep=lambda _: None)
    with pytest.raises(GatewayTimeout):
        backend.complete(ModelConfig(model_id="m"), (("system", "s"),))


def test_complete_requires_system_first():
    ctx = ConversationContext(token_budget=100)
    with pytest.raises(ValueError):
        complete(ReplayBackend([]), ModelConfig(model_id="m"), ctx)


# ---------------------------------------------------------------------------
# accounting


def exchange(pt, ct):
    return CompletionExchange((), "r", pt, ct, 0.0)


def test_cost_is_exact_decimal():
    ledger = CostLedger()
    config = ModelConfig(model_id="m", price_in="0.03", price_out="0.06")
    record_cost(ledger, exchange(1000, 0), config)
    assert ledger.cost == Decimal("0.03")
    record_cost(ledger, exchange(0, 1000), config)
    assert ledger.cost == Decimal("0.09")
    assert ledger.prompt_tokens == 1000
    assert ledger.completion_tokens == 1000
    assert ledger.calls == 2


def test_cost_is_order_invariant(rng):
    config = ModelConfig(model_id="m", price_in="0.0015", price_out="0.002")
    exchanges = [exchange(rng.randrange(2000), rng.randrange(2000)) for _ in range(40)]
    a = CostLedger()
    for e in exchanges:
        record_cost(a, e, config)
    b = CostLedger()
    for e in reversed(exchanges):
        record_cost(b, e, config)
    assert a.cost == b.cost


def test_cost_formatting_rounds_to_cents():
    ledger = CostLedger(cost=Decimal("1.337"))
    assert ledger.formatted_cost() == "$1.34"
    assert CostLedger(cost=Decimal("0.3")).formatted_cost() == "$0.30"


def test_no_float_artifacts_accumulate():
    config = ModelConfig(model_id="m", price_in="0.001", price_out="0")
    ledger = CostLedger()
    for _ in range(1000):
        record_cost(ledger, exchange(1, 0), config)
    assert ledger.cost == Decimal("0.001")


# ---------------------------------------------------------------------------
# selection and scrubbing


def test_best_of_select_max_with_ties_to_lowest_index():
    responses = ["a", "bb", "cc", "d"]
    assert best_of_select(responses, len) == 1
    assert best_of_select(["x"], len) == 0
    with pytest.raises(ValueError):
        best_of_select([], len)


def test_scrub_secrets():
    out = scrub_secrets("Authorization: Bearer sk-live-42; retry", ["sk-live-42", ""])
    assert "sk-live-42" not in out
    assert "[redacted]" in out
