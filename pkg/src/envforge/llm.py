"""Gateway for completion-service traffic: budgets, token accounting and
record/replay fixtures.

No other module talks to the completion endpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from . import canonical
from .errors import BudgetExceeded, FixtureDrift, FixtureExhausted, LLMUnavailable

log = logging.getLogger(__name__)

FIXTURE_FORMAT = "envforge.replay"
FIXTURE_VERSION = 1
DRIVERS = ("live", "replay", "record")

Message = dict  # {"role": ..., "content": ...}


def estimate_tokens(text: str) -> int:
    """Rough count: UTF-8 bytes / 4, rounded up."""
    return (len(text.encode("utf-8")) + 3) // 4


def estimate_messages(messages: Sequence[Message]) -> int:
    return sum(estimate_tokens(m["content"]) for m in messages)


def _normalize(text: str) -> str:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    return "\n".join(line.rstrip() for line in lines).strip()


def prompt_hash(messages: Sequence[Message]) -> str:
    norm = [{"role": m["role"], "content": _normalize(m["content"])} for m in messages]
    return hashlib.sha256(json.dumps(norm, sort_keys=True, ensure_ascii=False).encode()).hexdigest()


@dataclass
class CompletionExchange:
    messages: list[Message]
    reply: str
    prompt_tokens: int
    reply_tokens: int
    temperature: float = 0.0
    latency: float = 0.0
    prompt_hash: str = ""

    @property
    def tokens(self) -> int:
        return self.prompt_tokens + self.reply_tokens


@dataclass
class BudgetLedger:
    token_limit: int = 150_000
    turn_limit: int = 30
    tokens_used: int = 0
    turns_used: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def tokens_left(self) -> int:
        return self.token_limit - self.tokens_used

    def check_tokens(self, estimate: int) -> None:
        if self.tokens_used + estimate > self.token_limit:
            raise BudgetExceeded(
                f"token budget exhausted: {self.tokens_used} used + {estimate} requested > {self.token_limit}"
            )

    def charge(self, tokens: int) -> None:
        with self._lock:
            self.tokens_used += tokens

    def begin_turn(self) -> None:
        with self._lock:
            if self.turns_used >= self.turn_limit:
                raise BudgetExceeded(f"turn limit {self.turn_limit} reached")
            self.turns_used += 1

    def snapshot(self) -> dict:
        return {
            "token_limit": self.token_limit,
            "tokens_used": self.tokens_used,
            "turn_limit": self.turn_limit,
            "turns_used": self.turns_used,
        }


class Backend(Protocol):
    def complete(self, messages: list[Message], temperature: float,
                 max_tokens: int | None) -> tuple[str, dict | None]: ...


class HTTPBackend:
    """Chat-completions style JSON-over-HTTP endpoint.

    Configured from ``ENVFORGE_LLM_BASE_URL``, ``ENVFORGE_LLM_MODEL`` and
    ``ENVFORGE_LLM_API_KEY``. Transport errors are retried three times with
    exponential backoff; HTTP error statuses are not retried.
    """

    def __init__(self, base_url: str | None = None, model: str | None = None, api_key: str | None = None,
                 timeout: float = 300.0, attempts: int = 3, backoff: float = 1.0):
        self.base_url = (base_url or os.environ.get("ENVFORGE_LLM_BASE_URL", "")).rstrip("/")
        self.model = model or os.environ.get("ENVFORGE_LLM_MODEL", "")
        self.api_key = api_key if api_key is not None else os.environ.get("ENVFORGE_LLM_API_KEY", "")
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        if not self.base_url or not self.model:
            raise LLMUnavailable("completion endpoint not configured (ENVFORGE_LLM_BASE_URL / ENVFORGE_LLM_MODEL)")

    def complete(self, messages, temperature, max_tokens):
        import httpx

        body = {"model": self.model, "messages": messages, "temperature": temperature}
        if max_tokens:
            body["max_tokens"] = max_tokens
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last: Exception | None = None
        for attempt in range(self.attempts):
            try:
                resp = httpx.post(f"{self.base_url}/chat/completions", json=body, headers=headers,
                                  timeout=self.timeout)
            except httpx.TransportError as exc:
                last = exc
                time.sleep(self.backoff * 2 ** attempt)
                continue
            if resp.status_code >= 400:
                raise LLMUnavailable(f"completion endpoint returned {resp.status_code}: {resp.text[:500]}")
            data = resp.json()
            return data["choices"][0]["message"]["content"] or "", data.get("usage")
        raise LLMUnavailable(f"completion endpoint unreachable after {self.attempts} attempts: {last}")


class ScriptedBackend:
    """Returns canned replies in order; a callable receives the messages instead."""

    def __init__(self, replies: Sequence[str] | Callable[[list[Message]], str]):
        self._fn = replies if callable(replies) else None
        self._replies = list(replies) if not callable(replies) else []
        self.calls = 0

    def complete(self, messages, temperature, max_tokens):
        self.calls += 1
        if self._fn is not None:
            return self._fn(messages), None
        if not self._replies:
            raise LLMUnavailable("scripted backend has no replies left")
        return self._replies.pop(0), None


@dataclass
class ReplayEntry:
    prompt_hash: str
    reply: str
    prompt_tokens: int
    reply_tokens: int
    messages: list[Message] | None = None


def load_fixture(path: Path | str) -> list[ReplayEntry]:
    data = canonical.read(Path(path))
    if data.get("format") != FIXTURE_FORMAT or data.get("version") != FIXTURE_VERSION:
        raise FixtureDrift(f"unsupported replay fixture format in {path}")
    return [ReplayEntry(**e) for e in data["exchanges"]]


def save_fixture(path: Path | str, entries: Sequence[ReplayEntry]) -> None:
    canonical.write(Path(path), {
        "format": FIXTURE_FORMAT,
        "version": FIXTURE_VERSION,
        "exchanges": [asdict(e) for e in entries],
    })


class LLMClient:
    """One completion handle. ``driver`` selects live, replay or record mode."""

    def __init__(self, driver: str = "live", backend: Backend | None = None,
                 fixture: Path | str | None = None, temperature: float = 0.0,
                 keep_messages: bool = True):
        if driver not in DRIVERS:
            raise ValueError(f"unknown driver {driver!r}")
        if driver in ("replay", "record") and fixture is None:
            raise ValueError(f"driver {driver!r} needs a fixture path")
        if driver in ("live", "record") and backend is None:
            backend = HTTPBackend()
        self.driver = driver
        self.backend = backend
        self.fixture = Path(fixture) if fixture else None
        self.temperature = temperature
        self.keep_messages = keep_messages
        self.exchanges: list[CompletionExchange] = []
        self._replay = load_fixture(self.fixture) if driver == "replay" else []
        self._cursor = 0
        self._recorded: list[ReplayEntry] = []

    @property
    def remaining_fixture(self) -> int:
        return len(self._replay) - self._cursor

    def complete(self, messages: Sequence[Message], ledger: BudgetLedger) -> CompletionExchange:
        messages = [{"role": m["role"], "content": m["content"]} for m in messages]
        estimate = estimate_messages(messages)
        ledger.check_tokens(estimate)
        digest = prompt_hash(messages)
        started = time.monotonic()
        if self.driver == "replay":
            if self._cursor >= len(self._replay):
                raise FixtureExhausted(f"replay fixture {self.fixture} has no exchange #{self._cursor + 1}")
            entry = self._replay[self._cursor]
            if entry.prompt_hash != digest:
                raise FixtureDrift(
                    f"prompt for exchange #{self._cursor + 1} does not match {self.fixture}",
                    expected=entry.prompt_hash, actual=digest,
                )
            self._cursor += 1
            reply, p_tok, r_tok = entry.reply, entry.prompt_tokens, entry.reply_tokens
        else:
            reply, usage = self.backend.complete(messages, self.temperature, max(1, ledger.tokens_left - estimate))
            usage = usage or {}
            p_tok = int(usage.get("prompt_tokens") or estimate)
            r_tok = int(usage.get("completion_tokens") or estimate_tokens(reply))
            if self.driver == "record":
                self._recorded.append(ReplayEntry(digest, reply, p_tok, r_tok,
                                                  messages if self.keep_messages else None))
                save_fixture(self.fixture, self._recorded)
        exchange = CompletionExchange(messages, reply, p_tok, r_tok, self.temperature,
                                      time.monotonic() - started, digest)
        ledger.charge(exchange.tokens)
        self.exchanges.append(exchange)
        return exchange

    @property
    def tokens_total(self) -> int:
        return sum(e.tokens for e in self.exchanges)
