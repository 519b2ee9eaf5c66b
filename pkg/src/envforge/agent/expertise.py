"""Expertise mined from successful sessions: error signatures and the commands that fixed them."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from filelock import FileLock

from .. import canonical
from ..sandbox import install_like

_EXC_LINE = re.compile(r"((?:[A-Za-z_]\w*\.)*[A-Za-z_]\w*(?:Error|Exception)):\s*(.*)")
_GENERIC = re.compile(r"^\s*(?:error|fatal|e)(?:\[\w+\])?[:!]\s*(.+)$", re.I | re.M)
_PATH = re.compile(r"(?:[A-Za-z]:)?(?:/[\w.@+-]+){2,}/?")
_HEX = re.compile(r"\b0x[0-9a-f]+\b|\b[0-9a-f]{8,}\b", re.I)
_LINENO = re.compile(r"\bline \d+\b|:\d+(?::\d+)?\b")


@dataclass
class ExpertiseRecord:
    language: str
    error_signature: str
    resolution_commands: list[str]
    source_traces: list[str] = field(default_factory=list)
    success_count: int = 1
    note: str = ""

    def __post_init__(self):
        if self.success_count < 1:
            raise ValueError("success_count must be at least 1")
        if not self.resolution_commands:
            raise ValueError("a record needs resolution commands")

    @property
    def key(self) -> tuple[str, str]:
        return self.language, self.error_signature

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExpertiseRecord":
        return cls(**data)


def normalize_error(text: str) -> str | None:
    """Signature of the last error in ``text``: lowercased, without paths, hex ids or line numbers."""
    if not text:
        return None
    hits = _EXC_LINE.findall(text)
    if hits:
        cls, msg = hits[-1]
        raw = f"{cls.rsplit('.', 1)[-1]}: {msg}"
    else:
        generic = _GENERIC.findall(text)
        if not generic:
            return None
        raw = "error: " + generic[-1]
    raw = _PATH.sub("<path>", raw)
    raw = _HEX.sub("<hex>", raw)
    raw = _LINENO.sub("", raw)
    raw = re.sub(r"\s+", " ", raw).strip().lower()
    return raw[:200] or None


def _failed(step) -> bool:
    obs = step.observation
    return obs is not None and obs.exit_code != 0


def _succeeded(step) -> bool:
    obs = step.observation
    return obs is not None and obs.exit_code == 0


def merge_records(records) -> list[ExpertiseRecord]:
    merged: dict[tuple[str, str], ExpertiseRecord] = {}
    for r in records:
        if r.key in merged:
            m = merged[r.key]
            m.success_count += r.success_count
            m.source_traces = sorted(set(m.source_traces) | set(r.source_traces))
        else:
            merged[r.key] = ExpertiseRecord(r.language, r.error_signature, list(r.resolution_commands),
                                            sorted(set(r.source_traces)), r.success_count, r.note)
    return [merged[k] for k in sorted(merged)]


def accumulate_expertise(traces, llm=None, ledger=None, summarize: bool = False) -> list[ExpertiseRecord]:
    """Pair each failed observation in a successful trace with the install-like commands that
    succeeded after it and before the next passing check."""
    found: list[ExpertiseRecord] = []
    for trace in traces:
        if trace.outcome != "success":
            continue
        pending: list[str] = []
        fixes: list[str] = []

        def flush():
            cmds = install_like(fixes)
            for sig in dict.fromkeys(pending):
                if cmds:
                    found.append(ExpertiseRecord(trace.language, sig, list(cmds), [trace.trace_id]))

        for step in trace.steps:
            if _failed(step):
                sig = normalize_error(step.observation.stdout + "\n" + step.observation.stderr)
                if sig:
                    pending.append(sig)
                continue
            if not pending or not _succeeded(step):
                continue
            if step.action.kind == "shell":
                fixes.append(step.action.command)
            if step.verification:
                flush()
                pending, fixes = [], []
        if pending:
            flush()
    records = merge_records(found)
    if summarize and llm is not None:
        for r in records:
            prompt = (f"In one sentence, explain why these commands fix the error \"{r.error_signature}\":\n"
                      + "\n".join(r.resolution_commands))
            try:
                r.note = llm.complete([{"role": "user", "content": prompt}], ledger).reply.strip()
            except Exception:
                r.note = ""
    return records


class ExpertiseStore:
    """Single JSON file of records; writers merge under a file lock."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = FileLock(str(self.path) + ".lock")

    def load(self) -> list[ExpertiseRecord]:
        if not self.path.exists():
            return []
        return [ExpertiseRecord.from_dict(d) for d in canonical.read(self.path).get("records", [])]

    def merge(self, records) -> list[ExpertiseRecord]:
        with self._lock:
            current = self.load()
            merged = merge_records(current + list(records))
            self.path.parent.mkdir(parents=True, exist_ok=True)
            canonical.write(self.path, {"version": 1, "records": [r.to_dict() for r in merged]})
        return merged

    def relevant(self, language: str, signatures=(), limit: int = 5) -> list[ExpertiseRecord]:
        """Records for ``language``; with signatures, only those matching one of them."""
        records = [r for r in self.load() if r.language == language]
        sigs = set(signatures)
        if sigs:
            records = [r for r in records if r.error_signature in sigs]
        records.sort(key=lambda r: (-r.success_count, r.error_signature))
        return records[:limit]
