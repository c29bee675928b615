"""Model access: HTTP chat backend, deterministic replay backend, cost ledger.

Live requests go to an OpenAI-style chat endpoint: POST
``{base_url}/chat/completions`` with a JSON body of model, messages
(role/content pairs), temperature, max_tokens, and top_p/top_k when the
config sets them; unsupported knobs are omitted, never guessed. The API key
comes from an environment variable at call time and is never stored on the
exchange or written into reports.

Replay scripts make whole sessions reproducible offline: a JSON array of
``{fingerprint, response_text, prompt_tokens, completion_tokens}`` consumed
in order. A non-null fingerprint must match the hash of (model_id, rendered
message texts) for the request being served; null matches anything, for
hand-written scripts whose prompts embed unpredictable diagnostics.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable, Optional, Sequence

import requests

from .prompts import ConversationContext, Role, count_tokens


class GatewayError(Exception):
    pass


class GatewayTimeout(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class AuthFailure(GatewayError):
    pass


class ProtocolError(GatewayError):
    """The endpoint answered with something that is not a chat completion."""


class ReplayExhausted(GatewayError):
    pass


class ReplayMismatch(GatewayError):
    pass


@dataclass
class ModelConfig:
    model_id: str
    temperature: float = 1.0
    max_tokens: int = 2048
    top_p: Optional[float] = None
    top_k: Optional[int] = None
    best_of: int = 1
    price_in: Decimal = Decimal("0")     # USD per 1K prompt tokens
    price_out: Decimal = Decimal("0")    # USD per 1K completion tokens

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.best_of < 1:
            raise ValueError("best_of must be positive")
        self.price_in = Decimal(str(self.price_in))
        self.price_out = Decimal(str(self.price_out))

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in raw.items() if k in known})


@dataclass(frozen=True)
class CompletionExchange:
    request_messages: tuple[tuple[str, str], ...]  # (role, text) pairs
    response_text: str
    prompt_tokens: int
    completion_tokens: int
    latency_s: float


def request_fingerprint(model_id: str, messages: Sequence[tuple[str, str]]) -> str:
    h = hashlib.sha256()
    h.update(model_id.encode("utf-8"))
    for role, text in messages:
        h.update(b"\x00")
        h.update(role.encode("utf-8"))
        h.update(b"\x01")
        h.update(text.encode("utf-8"))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# backends


@dataclass(frozen=True)
class ReplayEntry:
    response_text: str
    prompt_tokens: int
    completion_tokens: int
    fingerprint: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ReplayEntry":
        return cls(
            response_text=raw["response_text"],
            prompt_tokens=int(raw["prompt_tokens"]),
            completion_tokens=int(raw["completion_tokens"]),
            fingerprint=raw.get("fingerprint"),
        )


class ReplayBackend:
    """Serves scripted responses in order; complains loudly on divergence."""

    def __init__(self, entries: Sequence[ReplayEntry]) -> None:
        self.entries = list(entries)
        self.cursor = 0

    @classmethod
    def from_script(cls, text: str) -> "ReplayBackend":
        return cls([ReplayEntry.from_dict(row) for row in json.loads(text)])

    @property
    def remaining(self) -> int:
        return len(self.entries) - self.cursor

    def complete(
        self, config: ModelConfig, messages: Sequence[tuple[str, str]]
    ) -> tuple[str, int, int]:
        if self.cursor >= len(self.entries):
            raise ReplayExhausted(
                f"script has {len(self.entries)} responses, request"
                f" {self.cursor + 1} arrived"
            )
        entry = self.entries[self.cursor]
        if entry.fingerprint is not None:
            got = request_fingerprint(config.model_id, messages)
            if got != entry.fingerprint:
                raise ReplayMismatch(
                    f"request {self.cursor + 1}: fingerprint {got} does not match"
                    f" scripted {entry.fingerprint}"
                )
        self.cursor += 1
        return entry.response_text, entry.prompt_tokens, entry.completion_tokens


class HttpChatBackend:
    """OpenAI-style chat endpoint with bounded retry.

    Transient failures (connection errors, timeouts, 429, 5xx) are retried up
    to `attempts` times total with exponential backoff starting at
    `backoff_s`; anything else fails immediately.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "LLM_API_KEY",
        timeout_s: float = 60.0,
        attempts: int = 3,
        backoff_s: float = 1.0,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.attempts = attempts
        self.backoff_s = backoff_s
        self.session = session or requests.Session()
        self.sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(
        self, config: ModelConfig, messages: Sequence[tuple[str, str]]
    ) -> tuple[str, int, int]:
        body: dict = {
            "model": config.model_id,
            "messages": [{"role": r, "content": t} for r, t in messages],
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }
        if config.top_p is not None:
            body["top_p"] = config.top_p
        if config.top_k is not None:
            body["top_k"] = config.top_k

        last_error: GatewayError = GatewayTimeout("no attempt made")
        for attempt in range(self.attempts):
            if attempt:
                self.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    f"{self.base_url}/chat/completions",
                    json=body,
                    headers=self._headers(),
                    timeout=self.timeout_s,
                )
            except requests.Timeout:
                last_error = GatewayTimeout(f"no response within {self.timeout_s}s")
                continue
            except requests.ConnectionError as err:
                last_error = GatewayTimeout(f"connection failed: {err}")
                continue
            if resp.status_code in (401, 403):
                raise AuthFailure(f"endpoint rejected credentials ({resp.status_code})")
            if resp.status_code == 429:
                last_error = RateLimited("endpoint rate limited the request")
                continue
            if resp.status_code >= 500:
                last_error = ProtocolError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp, messages)
        raise last_error

    def _parse(
        self, resp: requests.Response, messages: Sequence[tuple[str, str]]
    ) -> tuple[str, int, int]:
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as err:
            raise ProtocolError(f"malformed completion payload: {err}") from err
        usage = payload.get("usage") or {}
        prompt_tokens = usage.get("prompt_tokens")
        completion_tokens = usage.get("completion_tokens")
        if prompt_tokens is None:
            prompt_tokens = sum(count_tokens(t) for _, t in messages)
        if completion_tokens is None:
            completion_tokens = count_tokens(text)
        return text, int(prompt_tokens), int(completion_tokens)


Backend = object  # anything with .complete(config, messages)


def complete(backend, config: ModelConfig, context: ConversationContext) -> CompletionExchange:
    """One model call over the current context."""
    if not context.messages:
        raise ValueError("context has no messages")
    if context.messages[0].role is not Role.SYSTEM:
        raise ValueError("context must start with the system prompt")
    messages = tuple((m.role.value, m.text) for m in context.messages)
    started = time.monotonic()
    text, prompt_tokens, completion_tokens = backend.complete(config, messages)
    return CompletionExchange(
        request_messages=messages,
        response_text=text,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        latency_s=time.monotonic() - started,
    )


# ---------------------------------------------------------------------------
# accounting


@dataclass
class CostLedger:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost: Decimal = Decimal("0")
    calls: int = 0

    def formatted_cost(self) -> str:
        return f"${self.cost.quantize(Decimal('0.01')):f}"


def record_cost(ledger: CostLedger, exchange: CompletionExchange, config: ModelConfig) -> CostLedger:
    """Exact decimal accounting: tokens * USD-per-1K, no float rounding."""
    ledger.prompt_tokens += exchange.prompt_tokens
    ledger.completion_tokens += exchange.completion_tokens
    ledger.cost += (
        Decimal(exchange.prompt_tokens) * config.price_in
        + Decimal(exchange.completion_tokens) * config.price_out
    ) / Decimal(1000)
    ledger.calls += 1
    return ledger


def best_of_select(responses: Sequence[str], scorer: Callable[[str], float]) -> int:
    """Index of the best-scoring response; ties go to the earliest."""
    if not responses:
        raise ValueError("no responses to select from")
    best_index = 0
    best_score = scorer(responses[0])
    for i, text in enumerate(responses[1:], start=1):
        score = scorer(text)
        if score > best_score:
            best_index, best_score = i, score
    return best_index


def scrub_secrets(text: str, secrets: Sequence[str]) -> str:
    """Blot out key material before text reaches logs or reports."""
    for secret in secrets:
        if secret:
            text = text.replace(secret, "[redacted]")
    return text
