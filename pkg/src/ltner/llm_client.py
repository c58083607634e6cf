"""Chat-completion execution: live endpoint, replay cache, or scripted mock.

Every request is identified by a digest of its canonical serialization
(model + messages + temperature), which keys the replay cache: one JSON file
per digest holding the request and response. A cache recorded once makes an
entire experiment bit-reproducible offline.

Cost arithmetic uses decimals end to end; token truth comes from the
provider's usage fields when live, while :func:`estimate_tokens` is only a
pre-flight heuristic for cost caps.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .prompting import ChatMessage

API_KEY_ENV = "LTNER_API_KEY"


class CacheMissError(LookupError):
    """A replay lookup found no cached response for the request digest."""

    def __init__(self, digest: str):
        super().__init__(f"replay cache miss for digest {digest}")
        self.digest = digest


class TransportError(RuntimeError):
    """A live request failed after exhausting every retry attempt."""


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_output_tokens: int = 512

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    input_tokens: int
    output_tokens: int
    backend: str
    latency_ms: int = 0
    attempts: int = 1


def request_digest(req: CompletionRequest) -> str:
    """Stable content hash of (model, messages, temperature)."""
    payload = {
        "model": req.model,
        "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        "temperature": req.temperature,
    }
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def estimate_tokens(messages: Sequence[ChatMessage]) -> int:
    """Pre-flight token heuristic: ceil(total content bytes / 4) + 4 per message.

    An estimate only; never use it for billing reports.
    """
    total_bytes = sum(len(m.content.encode("utf-8")) for m in messages)
    return math.ceil(total_bytes / 4) + 4 * len(messages)


class PriceTable:
    """Per-model input/output prices in currency units per million tokens."""

    def __init__(self, prices: dict[str, tuple[Decimal, Decimal]]):
        for model, (inp, out) in prices.items():
            if inp < 0 or out < 0:
                raise ValueError(f"negative price for {model!r}")
        self._prices = dict(prices)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "PriceTable":
        prices = {}
        for model, entry in mapping.items():
            prices[model] = (Decimal(str(entry["input"])), Decimal(str(entry["output"])))
        return cls(prices)

    def for_model(self, model: str) -> tuple[Decimal, Decimal]:
        try:
            return self._prices[model]
        except KeyError:
            raise ValueError(f"no prices configured for model {model!r}") from None


def cost_of(input_tokens: int, output_tokens: int, model: str, prices: PriceTable) -> Decimal:
    """Exact decimal cost of one usage record."""
    inp_price, out_price = prices.for_model(model)
    million = Decimal(1_000_000)
    return (Decimal(input_tokens) * inp_price + Decimal(output_tokens) * out_price) / million


class Backend(Protocol):
    name: str

    def complete(self, req: CompletionRequest) -> CompletionResult: ...


class MockBackend:
    """Scripted responder; token counts fall back to the estimate heuristic."""

    name = "mock"

    def __init__(self, responder: Callable[[CompletionRequest], str]):
        self._responder = responder

    def complete(self, req: CompletionRequest) -> CompletionResult:
        text = self._responder(req)
        return CompletionResult(
            text=text,
            input_tokens=estimate_tokens(req.messages),
            output_tokens=math.ceil(len(text.encode("utf-8")) / 4),
            backend=self.name,
        )


class ReplayBackend:
    """Content-addressed transcript store.

    Hits return the recorded response verbatim. Misses raise
    :class:`CacheMissError` unless a fall-through backend is configured, in
    which case the fall-through result is recorded and returned. Reads are
    lock-free; writes serialize through one lock.
    """

    name = "replay"

    def __init__(self, cache_dir: str | Path, fallthrough: Backend | None = None):
        self.cache_dir = Path(cache_dir)
        self.fallthrough = fallthrough
        self._write_lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.cache_dir / f"{digest}.json"

    def complete(self, req: CompletionRequest) -> CompletionResult:
        digest = request_digest(req)
        path = self._path(digest)
        if path.exists():
            entry = json.loads(path.read_text(encoding="utf-8"))
            resp = entry["response"]
            return CompletionResult(
                text=resp["text"],
                input_tokens=int(resp["input_tokens"]),
                output_tokens=int(resp["output_tokens"]),
                backend=self.name,
            )
        if self.fallthrough is None:
            raise CacheMissError(digest)
        result = self.fallthrough.complete(req)
        self.store(req, result)
        return result

    def store(self, req: CompletionRequest, result: CompletionResult) -> str:
        digest = request_digest(req)
        entry = {
            "request": {
                "model": req.model,
                "messages": [{"role": m.role, "content": m.content} for m in req.messages],
                "temperature": req.temperature,
            },
            "response": {
                "text": result.text,
                "input_tokens": result.input_tokens,
                "output_tokens": result.output_tokens,
            },
        }
        with self._write_lock:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            self._path(digest).write_text(
                json.dumps(entry, ensure_ascii=False, indent=1), encoding="utf-8")
        return digest


class RateLimiter:
    """Sliding-window limiter; 0 requests per minute disables limiting."""

    def __init__(self, requests_per_minute: int = 0):
        self.rpm = requests_per_minute
        self._stamps: list[float] = []
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rpm <= 0:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                self._stamps = [t for t in self._stamps if now - t < 60.0]
                if len(self._stamps) < self.rpm:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            time.sleep(max(wait, 0.01))


class LiveBackend:
    """OpenAI-compatible chat-completions client with retry and rate limiting.

    The API key comes from the LTNER_API_KEY environment variable unless
    passed explicitly. Transport failures and 5xx responses retry with
    exponential backoff; 429 honors the Retry-After header.
    """

    name = "live"

    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 120.0,
                 max_attempts: int = 4, backoff_base: float = 1.0,
                 requests_per_minute: int = 0,
                 transport: Callable[..., "object"] | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.limiter = RateLimiter(requests_per_minute)
        self._sleep = sleep
        if transport is None:
            import requests

            transport = requests.post
        self._post = transport

    def complete(self, req: CompletionRequest) -> CompletionResult:
        if not self.api_key:
            raise TransportError(f"no API key: set {API_KEY_ENV} or pass api_key")
        payload = {
            "model": req.model,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        start = time.monotonic()
        last_error = "no attempt made"
        for attempt in range(1, self.max_attempts + 1):
            self.limiter.acquire()
            try:
                resp = self._post(f"{self.base_url}/chat/completions",
                                  json=payload, headers=headers, timeout=self.timeout)
            except Exception as exc:
                last_error = f"transport failure: {exc}"
                self._backoff(attempt)
                continue
            status = getattr(resp, "status_code", 0)
            if status == 429:
                retry_after = _retry_after_seconds(resp)
                last_error = "HTTP 429"
                self._sleep(retry_after if retry_after is not None
                            else self.backoff_base * 2 ** (attempt - 1))
                continue
            if status >= 500:
                last_error = f"HTTP {status}"
                self._backoff(attempt)
                continue
            if status != 200:
                raise TransportError(f"HTTP {status}: {getattr(resp, 'text', '')[:500]}")
            body = resp.json()
            text = body["choices"][0]["message"]["content"] or ""
            usage = body.get("usage", {})
            latency = int((time.monotonic() - start) * 1000)
            return CompletionResult(
                text=text,
                input_tokens=int(usage.get("prompt_tokens", estimate_tokens(req.messages))),
                output_tokens=int(usage.get("completion_tokens",
                                            math.ceil(len(text.encode("utf-8")) / 4))),
                backend=self.name,
                latency_ms=latency,
                attempts=attempt,
            )
        raise TransportError(f"request failed after {self.max_attempts} attempts ({last_error})")

    def _backoff(self, attempt: int) -> None:
        if attempt < self.max_attempts:
            self._sleep(self.backoff_base * 2 ** (attempt - 1))


def _retry_after_seconds(resp) -> float | None:
    headers = getattr(resp, "headers", {}) or {}
    value = headers.get("Retry-After")
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        return None
