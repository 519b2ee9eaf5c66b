"""External knowledge: web search snippets and the local issue database."""

from __future__ import annotations

import html
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

from ..errors import IssueDBUnavailable
from ..evaluation import error_class_of

log = logging.getLogger(__name__)

MAX_RESULTS = 5
RERANK_POOL = 10
_WORD = re.compile(r"[a-z][a-z0-9_.-]{2,}")
_STOP = {"the", "and", "for", "with", "not", "from", "this", "that", "line", "file", "error", "named", "module"}


@dataclass
class WebResult:
    title: str
    url: str
    excerpt: str


class WebClient(Protocol):
    def search(self, query: str, limit: int) -> list[WebResult]: ...


class StackExchangeClient:
    """Question search on a StackExchange site through its public API."""

    endpoint = "https://api.stackexchange.com/2.3/search/excerpts"

    def __init__(self, site: str = "stackoverflow", timeout: float = 15.0, key: str | None = None):
        self.site = site
        self.timeout = timeout
        self.key = key

    def search(self, query: str, limit: int) -> list[WebResult]:
        import httpx

        params = {"order": "desc", "sort": "relevance", "q": query, "site": self.site, "pagesize": limit}
        if self.key:
            params["key"] = self.key
        resp = httpx.get(self.endpoint, params=params, timeout=self.timeout)
        resp.raise_for_status()
        out = []
        for item in resp.json().get("items", [])[:limit]:
            qid = item.get("question_id")
            excerpt = re.sub(r"<[^>]+>", "", html.unescape(item.get("excerpt", ""))).strip()
            out.append(WebResult(html.unescape(item.get("title", "")),
                                 f"https://{self.site}.com/q/{qid}" if qid else "", excerpt))
        return out


class FixtureWebClient:
    def __init__(self, results: dict[str, list[WebResult]] | list[WebResult] | None = None, fail: bool = False):
        self.results = results or []
        self.fail = fail

    def search(self, query: str, limit: int) -> list[WebResult]:
        if self.fail:
            raise ConnectionError("search client unreachable")
        rows = self.results.get(query, []) if isinstance(self.results, dict) else self.results
        return list(rows)[:limit]


def search_web(query: str, client: WebClient | None, limit: int = MAX_RESULTS) -> tuple[list[WebResult], list[str]]:
    """At most ``limit`` snippets; any client failure becomes a warning and an empty list."""
    if client is None:
        return [], ["web search is not configured"]
    try:
        return client.search(query, limit)[:limit], []
    except Exception as exc:
        log.warning("web search failed: %s", exc)
        return [], [f"web search unavailable: {exc}"]


@dataclass
class IssueEntry:
    error_text: str
    error_class: str | None
    fix_commands: list[str]
    repo: str = ""
    id: str = ""

    @classmethod
    def from_dict(cls, data: dict, index: int) -> "IssueEntry":
        return cls(str(data.get("error_text", "")), data.get("error_class"),
                   [str(c) for c in data.get("fix_commands", [])], str(data.get("repo", "")),
                   str(data.get("id") or f"issue-{index}"))


@dataclass
class IssueHit:
    entry: IssueEntry
    score: float
    stage: str = "keyword"
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"score": round(self.score, 6), "stage": self.stage, **asdict(self.entry)}


def load_issue_db(path: Path | str | None) -> list[IssueEntry]:
    if not path:
        raise IssueDBUnavailable("no issue database configured")
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise IssueDBUnavailable(f"cannot read issue database {path}: {exc}") from None
    if not isinstance(data, list):
        raise IssueDBUnavailable(f"issue database {path} is not a JSON list")
    return [IssueEntry.from_dict(d, i) for i, d in enumerate(data) if isinstance(d, dict)]


def keywords(text: str) -> set[str]:
    return {w.strip(".-") for w in _WORD.findall(text.lower())} - _STOP


def keyword_score(query: str, entry: IssueEntry) -> float:
    """Share of query keywords found in the entry, plus one when the exception classes agree."""
    q = keywords(query)
    overlap = len(q & keywords(entry.error_text)) / len(q) if q else 0.0
    q_class = error_class_of(query)
    bonus = 1.0 if q_class and entry.error_class and q_class == entry.error_class else 0.0
    return overlap + bonus


RERANK_PROMPT = """An engineer hit this error while setting up a repository:

{query}

Below are past issues with the fixes that worked. Order them by how likely the fix is to help with this error; drop any that are unrelated.

{listing}

Reply with a JSON array of issue ids, most useful first."""


def retrieve_issue(query: str, entries: list[IssueEntry], llm=None, ledger=None,
                   limit: int = MAX_RESULTS) -> tuple[list[IssueHit], list[str]]:
    scored = [IssueHit(e, keyword_score(query, e), provenance={"repo": e.repo, "id": e.id}) for e in entries]
    scored = [h for h in scored if h.score > 0]
    scored.sort(key=lambda h: (-h.score, h.entry.id))
    pool = scored[:RERANK_POOL]
    warnings: list[str] = []
    if llm is not None and len(pool) > 1:
        listing = "\n".join(f"- id={h.entry.id}: {h.entry.error_text[:300]!r} fix: {'; '.join(h.entry.fix_commands)}"
                            for h in pool)
        try:
            reply = llm.complete([{"role": "user", "content": RERANK_PROMPT.format(query=query, listing=listing)}],
                                 ledger).reply
            m = re.search(r"\[.*\]", reply, re.S)
            order = [str(x) for x in json.loads(m.group(0))] if m else []
        except Exception as exc:
            order = []
            warnings.append(f"rerank failed, keeping keyword order: {exc}")
        if order:
            by_id = {h.entry.id: h for h in pool}
            reranked = [by_id[i] for i in dict.fromkeys(order) if i in by_id]
            for h in reranked:
                h.stage = "reranked"
            pool = reranked or pool
    return pool[:limit], warnings
