"""Actions and the reply parser that produces them."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..errors import SchemaError, Unparseable

KINDS = ("tool", "shell", "stop")
_THOUGHT = re.compile(r"#{2,4}\s*Thought:?\s*(.*?)(?=#{2,4}\s*Action:?|```|\Z)", re.S | re.I)
_ACTION_HEAD = re.compile(r"#{2,4}\s*Action:?", re.I)
_FENCE = re.compile(r"```[ \t]*([\w+-]*)[ \t]*\n(.*?)\n?[ \t]*```", re.S)


@dataclass
class Action:
    kind: str
    tool: str | None = None
    arguments: dict | None = field(default=None)
    command: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind == "shell" and not (self.command or "").strip():
            raise ValueError("shell actions need a command")
        if self.kind == "tool" and not self.tool:
            raise ValueError("tool actions need a tool name")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "tool": self.tool, "arguments": self.arguments, "command": self.command}

    @classmethod
    def from_dict(cls, data: dict) -> "Action":
        return cls(**data)

    def describe(self) -> str:
        return self.command or self.tool or self.kind


def parse_llm_response(reply: str, registry) -> tuple[str, Action]:
    """Split a reply into its thought and the action in its fenced block.

    A fenced ``stop`` (or a bare ``stop`` line in the action section) ends
    the session; a fenced registered tool invocation becomes a tool action
    whose arguments are None when they fail validation; anything else in the
    fence is a shell command.
    """
    m = _THOUGHT.search(reply)
    thought = m.group(1).strip() if m else ""
    head = _ACTION_HEAD.search(reply)
    tail = reply[head.end():] if head else reply
    fence = _FENCE.search(tail) or _FENCE.search(reply)
    if fence is None:
        section = tail.strip() if head else ""
        if section.strip("` \n").lower() == "stop":
            return thought, Action("stop", tool="stop", arguments={}, command="stop")
        raise Unparseable("no fenced command block and no stop in the reply")
    body = fence.group(2).strip()
    if not thought and not head:
        thought = reply[:fence.start()].strip()
    lines = [ln for ln in body.splitlines() if ln.strip()]
    if not lines:
        raise Unparseable("the fenced command block is empty")
    if len(lines) == 1 and lines[0].strip().lower() == "stop":
        return thought, Action("stop", tool="stop", arguments={}, command="stop")
    first = lines[0].split()[0]
    if first in registry:  # tool calls may span lines inside quoted arguments
        name = registry.get(first).name
        if name == "stop":
            return thought, Action("stop", tool="stop", arguments={}, command=body)
        try:
            parsed = registry.parse(body)
            args = parsed[1] if parsed else None
        except SchemaError:
            args = None
        return thought, Action("tool", tool=name, arguments=args, command=body)
    return thought, Action("shell", command=body)
