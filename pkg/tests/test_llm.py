from __future__ import annotations

import httpx
import pytest

from envforge.errors import BudgetExceeded, FixtureDrift, FixtureExhausted, LLMUnavailable
from envforge.llm import (
    BudgetLedger, HTTPBackend, LLMClient, ScriptedBackend, estimate_messages, estimate_tokens, load_fixture,
    prompt_hash,
)

MSG = [{"role": "system", "content": "be brief"}, {"role": "user", "content": "hello"}]


def test_estimator_on_ascii_block():
    # 4000 ASCII bytes / 4
    assert estimate_tokens("a" * 4000) == 1000
    assert estimate_tokens("abcde") == 2
    assert estimate_messages(MSG) == 2 + 2


def test_prompt_hash_ignores_trailing_whitespace_and_newline_style():
    variant = [{"role": "system", "content": "be brief  \r\n"}, {"role": "user", "content": "hello\n"}]
    assert prompt_hash(MSG) == prompt_hash(variant)
    assert prompt_hash(MSG) != prompt_hash([MSG[0], {"role": "user", "content": "hellp"}])


def test_record_then_replay(tmp_path):
    fixture = tmp_path / "f.json"
    rec = LLMClient("record", ScriptedBackend(["one", "two"]), fixture=fixture)
    ledger = BudgetLedger()
    assert rec.complete(MSG, ledger).reply == "one"
    assert rec.complete(MSG + [{"role": "user", "content": "more"}], ledger).reply == "two"
    assert len(load_fixture(fixture)) == 2

    rep = LLMClient("replay", fixture=fixture)
    ledger2 = BudgetLedger()
    assert rep.complete(MSG, ledger2).reply == "one"
    assert rep.complete(MSG + [{"role": "user", "content": "more"}], ledger2).reply == "two"
    assert ledger2.tokens_used == ledger.tokens_used
    with pytest.raises(FixtureExhausted):
        rep.complete(MSG, ledger2)


def test_replay_detects_drift(tmp_path):
    fixture = tmp_path / "f.json"
    LLMClient("record", ScriptedBackend(["one"]), fixture=fixture).complete(MSG, BudgetLedger())
    rep = LLMClient("replay", fixture=fixture)
    flipped = [MSG[0], {"role": "user", "content": "hellO"}]
    with pytest.raises(FixtureDrift):
        rep.complete(flipped, BudgetLedger())


def test_token_budget_blocks_call_before_sending():
    backend = ScriptedBackend(["never"])
    llm = LLMClient("live", backend)
    with pytest.raises(BudgetExceeded):
        llm.complete(MSG, BudgetLedger(token_limit=3))
    assert llm.exchanges == [] and backend._replies == ["never"]


def test_turn_budget():
    ledger = BudgetLedger(turn_limit=2)
    ledger.begin_turn()
    ledger.begin_turn()
    with pytest.raises(BudgetExceeded):
        ledger.begin_turn()
    assert ledger.snapshot()["turns_used"] == 2


def test_driver_arguments_are_checked(tmp_path):
    with pytest.raises(ValueError):
        LLMClient("bogus", ScriptedBackend([]))
    with pytest.raises(ValueError):
        LLMClient("replay")


def test_http_backend_requires_endpoint(monkeypatch):
    monkeypatch.delenv("ENVFORGE_LLM_BASE_URL", raising=False)
    monkeypatch.delenv("ENVFORGE_LLM_MODEL", raising=False)
    with pytest.raises(LLMUnavailable):
        HTTPBackend()


def test_http_backend_posts_chat_request(monkeypatch):
    seen = {}

    def fake_post(url, json, headers, timeout):
        seen.update(url=url, body=json, headers=headers)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}],
                                         "usage": {"prompt_tokens": 7, "completion_tokens": 1}})

    monkeypatch.setattr(httpx, "post", fake_post)
    backend = HTTPBackend("http://llm.test/v1/", "m", api_key="k")
    llm = LLMClient("live", backend)
    ex = llm.complete(MSG, BudgetLedger())
    assert ex.reply == "ok" and ex.prompt_tokens == 7 and ex.reply_tokens == 1
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["headers"] == {"Authorization": "Bearer k"}
    assert seen["body"]["temperature"] == 0.0


def test_http_backend_retries_transport_errors(monkeypatch):
    calls = []

    def flaky(url, json, headers, timeout):
        calls.append(1)
        raise httpx.ConnectError("down")

    monkeypatch.setattr(httpx, "post", flaky)
    backend = HTTPBackend("http://llm.test", "m", attempts=3, backoff=0.0)
    with pytest.raises(LLMUnavailable):
        backend.complete(MSG, 0.0, None)
    assert len(calls) == 3
