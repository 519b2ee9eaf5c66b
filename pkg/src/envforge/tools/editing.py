"""File editing with backups: line ranges, inserts, regex substitution and model-guided rewrites."""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass
from pathlib import Path

from ..errors import BadRange, NoMatch, NotText, SchemaError
from ..repo import is_text

MODES = ("replace-range", "insert", "search-replace", "llm-guided")

EDIT_PROMPT = """You are editing one file. Apply the instruction to the excerpt and return the full replacement for the excerpt.

File: {path} (lines {start}-{end} shown)
Instruction: {instruction}

Excerpt:
```
{excerpt}
```

Reply with the rewritten excerpt inside a single fenced code block."""


@dataclass
class EditReport:
    path: str
    mode: str
    backup: str | None
    created: bool
    changed_lines: int
    diff: str

    def render(self) -> str:
        head = f"{'created' if self.created else 'edited'} {self.path} ({self.mode}, {self.changed_lines} lines changed)"
        if self.backup:
            head += f"; backup at {self.backup}"
        return head + ("\n" + self.diff if self.diff else "")


def _split(text: str) -> list[str]:
    return text.splitlines(keepends=True)


def _as_lines(content: str) -> list[str]:
    if content == "":
        return []
    return _split(content if content.endswith("\n") else content + "\n")


def _diff(path: str, before: str, after: str) -> tuple[str, int]:
    lines = list(difflib.unified_diff(_split(before), _split(after), f"a/{path}", f"b/{path}", n=1))
    changed = sum(1 for ln in lines if ln[:1] in "+-" and not ln.startswith(("+++", "---")))
    return "".join(lines), changed


def backup_path(path: Path) -> Path:
    return path.with_name(path.name + ".bak")


def _write(target: Path, before: str | None, after: str) -> str | None:
    """Write ``after``; keep the pre-edit bytes in ``.bak`` unless one already exists."""
    bak = None
    if before is not None:
        bak_path = backup_path(target)
        if not bak_path.exists():
            bak_path.write_bytes(target.read_bytes())
        bak = str(bak_path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(after, encoding="utf-8")
    return bak


def _read(target: Path) -> str:
    if not is_text(target):
        raise NotText(f"{target.name} is not a text file")
    return target.read_text(encoding="utf-8")


def replace_range(text: str, start: int, end: int, content: str) -> str:
    lines = _split(text)
    if start < 1 or end < start or end > len(lines):
        raise BadRange(f"lines {start}-{end} outside 1-{len(lines)}")
    return "".join(lines[:start - 1] + _as_lines(content) + lines[end:])


def insert_at(text: str, line: int | None, content: str) -> str:
    lines = _split(text)
    if lines and not lines[-1].endswith("\n"):
        lines[-1] += "\n"
    line = len(lines) + 1 if line is None else line
    if line < 1 or line > len(lines) + 1:
        raise BadRange(f"insert position {line} outside 1-{len(lines) + 1}")
    return "".join(lines[:line - 1] + _as_lines(content) + lines[line - 1:])


def search_replace(text: str, pattern: str, replacement: str, regex: bool = True, count: int = 0) -> str:
    if not regex:
        pattern, replacement = re.escape(pattern), replacement.replace("\\", "\\\\")
    try:
        compiled = re.compile(pattern, re.M)
    except re.error as exc:
        raise SchemaError(f"bad pattern: {exc}") from None
    new, n = compiled.subn(replacement, text, count=count)
    if n == 0:
        raise NoMatch(f"pattern {pattern!r} matches nothing")
    return new


def _fenced(reply: str) -> str:
    m = re.search(r"```[\w+-]*\n(.*?)```", reply, re.S)
    return m.group(1) if m else reply


def edit_file(target: Path, display: str, mode: str, *, start: int | None = None, end: int | None = None,
              line: int | None = None, content: str | None = None, pattern: str | None = None,
              replacement: str | None = None, regex: bool = True, count: int = 0, instruction: str | None = None,
              llm=None, ledger=None) -> EditReport:
    """Apply one edit to ``target``; ``display`` is the path shown in reports."""
    if mode not in MODES:
        raise SchemaError(f"mode must be one of {', '.join(MODES)}")
    exists = target.exists()
    if not exists and mode != "insert":
        raise SchemaError(f"{display} does not exist")
    before = _read(target) if exists else None
    text = before or ""
    if mode == "replace-range":
        if start is None or content is None:
            raise SchemaError("replace-range needs --start and --content")
        after = replace_range(text, start, end if end is not None else start, content)
    elif mode == "insert":
        if content is None:
            raise SchemaError("insert needs --content")
        after = insert_at(text, line, content)
    elif mode == "search-replace":
        if pattern is None or replacement is None:
            raise SchemaError("search-replace needs --pattern and --replacement")
        after = search_replace(text, pattern, replacement, regex, count)
    else:
        if not instruction:
            raise SchemaError("llm-guided needs --instruction")
        if llm is None:
            raise SchemaError("llm-guided editing needs a completion handle")
        lines = _split(text)
        lo = start or 1
        hi = end or len(lines)
        if lines and (lo < 1 or hi < lo or hi > len(lines)):
            raise BadRange(f"lines {lo}-{hi} outside 1-{len(lines)}")
        excerpt = "".join(lines[lo - 1:hi])
        prompt = EDIT_PROMPT.format(path=display, start=lo, end=hi, instruction=instruction, excerpt=excerpt.rstrip("\n"))
        reply = llm.complete([{"role": "user", "content": prompt}], ledger).reply
        after = "".join(lines[:lo - 1]) + "".join(_as_lines(_fenced(reply))) + "".join(lines[hi:])
    diff, changed = _diff(display, text, after)  # dry run: the diff is computed before anything is written
    bak = _write(target, before, after) if after != text or not exists else None
    return EditReport(display, mode, bak, not exists, changed, diff)
