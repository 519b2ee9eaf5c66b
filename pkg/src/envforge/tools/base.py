"""Tool descriptors, the shared long-flag argument parser and the dispatch registry."""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from ..errors import SchemaError
from ..repo import Repository, detect_artifacts, scan_repository

DEFAULT_OUTPUT_CAP = 16 * 1024
REQUIREMENTS = frozenset({"sandbox", "llm", "registry", "web", "issue-db"})
_TYPES = {"str": str, "int": int, "float": float, "bool": bool, "choice": str}


@dataclass(frozen=True)
class Param:
    type: str = "str"
    required: bool = False
    default: Any = None
    choices: tuple[str, ...] = ()
    help: str = ""

    def coerce(self, name: str, value):
        if self.type == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise SchemaError(f"--{name} expects a boolean, got {value!r}")
        try:
            value = _TYPES[self.type](value)
        except (TypeError, ValueError):
            raise SchemaError(f"--{name} expects {self.type}, got {value!r}") from None
        if self.type == "str" and self.required and not value.strip():
            raise SchemaError(f"--{name} must not be empty")
        if self.choices and value not in self.choices:
            raise SchemaError(f"--{name} must be one of {', '.join(self.choices)}")
        return value


@dataclass
class ToolResult:
    output: str
    data: dict | None = None
    verification: bool | None = None  # set by tools that verify the environment
    stop: bool = False
    warnings: list[str] = field(default_factory=list)
    truncated: bool = False


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    summary: str
    params: dict[str, Param]
    handler: Callable[..., ToolResult]
    positional: tuple[str, ...] = ()
    output_cap: int = DEFAULT_OUTPUT_CAP
    requires: frozenset = frozenset()
    needs_manifest: bool = False

    def __post_init__(self):
        if set(self.requires) - REQUIREMENTS:
            raise ValueError(f"unknown requirements {set(self.requires) - REQUIREMENTS}")
        if set(self.positional) - set(self.params):
            raise ValueError("positional names must be declared parameters")

    def usage(self) -> str:
        parts = [self.name]
        for name in self.positional:
            parts.append(f"<{name}>" if self.params[name].required else f"[{name}]")
        for name, p in self.params.items():
            if name in self.positional:
                continue
            flag = f"--{name}" if p.type == "bool" else f"--{name} <{'|'.join(p.choices) or p.type}>"
            parts.append(flag if p.required else f"[{flag}]")
        return " ".join(parts)


def canonical_name(name: str) -> str:
    return name.strip().replace("_", "-").lower()


def validate(descriptor: ToolDescriptor, args: dict) -> dict:
    """Check ``args`` against the descriptor and fill defaults."""
    out = {}
    for key, value in args.items():
        name = canonical_name(key)
        if name not in descriptor.params:
            raise SchemaError(f"{descriptor.name}: unknown parameter --{name}")
        param = descriptor.params[name]
        # an explicit None means "not given" so validated arguments can be validated again
        out[name] = param.coerce(name, value) if value is not None or param.required else param.default
    for name, p in descriptor.params.items():
        if name not in out:
            if p.required:
                raise SchemaError(f"{descriptor.name}: missing required --{name}")
            out[name] = p.default
    return out


def parse_arguments(descriptor: ToolDescriptor, tokens: list[str]) -> dict:
    """Long-flag parsing (``--depth 3``, ``--depth=3``, bare ``--flag`` for booleans) plus positionals."""
    args: dict[str, Any] = {}
    positional: list[str] = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.startswith("--") and len(tok) > 2:
            key, eq, value = tok[2:].partition("=")
            name = canonical_name(key)
            param = descriptor.params.get(name)
            if param is None:
                raise SchemaError(f"{descriptor.name}: unknown parameter --{name}")
            if not eq:
                if param.type == "bool" and (i + 1 >= len(tokens) or tokens[i + 1].startswith("--")
                                             or tokens[i + 1].lower() not in ("true", "false", "yes", "no", "1", "0")):
                    value = "true"
                elif i + 1 < len(tokens):
                    i += 1
                    value = tokens[i]
                else:
                    raise SchemaError(f"{descriptor.name}: --{name} needs a value")
            if name in args:
                raise SchemaError(f"{descriptor.name}: --{name} given twice")
            args[name] = value
        else:
            positional.append(tok)
        i += 1
    free = [n for n in descriptor.positional if n not in args]
    if len(positional) > len(free):
        raise SchemaError(f"{descriptor.name}: unexpected argument {positional[len(free)]!r}")
    for name, value in zip(free, positional):
        args[name] = value
    return validate(descriptor, args)


def split_command(text: str) -> list[str]:
    try:
        return shlex.split(text)
    except ValueError as exc:
        raise SchemaError(f"cannot split command: {exc}") from None


@dataclass
class ToolContext:
    """Everything a tool may touch during one session."""

    repo: Repository
    sandbox: Any = None
    llm: Any = None
    ledger: Any = None
    plugin: Any = None
    plugins: Any = None
    allowed: Any = None
    registry_client: Any = None
    web_client: Any = None
    issue_db: Path | str | None = None
    mirrors: dict[str, str] = field(default_factory=dict)
    report_path: str = "/tmp/envforge-test-report.json"
    workdir: str = "/repo"
    warnings: list[str] = field(default_factory=list)
    test_plan: Any = None

    def refresh(self) -> Repository:
        """Rescan the workspace so tools see files created by earlier commands."""
        self.repo = scan_repository(self.repo.root, name=self.repo.name, clock=_Fixed(self.repo.scanned_at))
        return self.repo

    def artifacts(self):
        return detect_artifacts(self.repo)

    def rel(self, path: str) -> str:
        """Map an in-sandbox path (``/repo/x``) or a relative path to a repository-relative one."""
        path = path.strip()
        root = self.workdir.rstrip("/")
        if path in (root, root + "/", ".", "./", ""):
            return ""
        if path.startswith(root + "/"):
            path = path[len(root) + 1:]
        elif path.startswith("/"):
            raise SchemaError(f"path {path} is outside the repository")
        parts = [p for p in Path(path).parts if p not in (".", "")]
        if ".." in parts:
            raise SchemaError(f"path {path} escapes the repository")
        return "/".join(parts)

    def host_path(self, path: str) -> Path:
        return self.repo.abspath(self.rel(path))


class _Fixed:
    def __init__(self, stamp):
        self.stamp = stamp

    def now(self):
        return self.stamp


def _cap(text: str, cap: int) -> tuple[str, bool]:
    data = text.encode("utf-8")
    if len(data) <= cap:
        return text, False
    marker = f"\n[... output truncated to {cap} bytes ...]"
    room = cap - len(marker.encode())
    return data[:room].decode("utf-8", errors="ignore") + marker, True


class ToolRegistry:
    def __init__(self, descriptors: list[ToolDescriptor] | tuple[ToolDescriptor, ...] = ()):
        self._tools: dict[str, ToolDescriptor] = {}
        for d in descriptors:
            self.register(d)

    def register(self, descriptor: ToolDescriptor) -> None:
        name = canonical_name(descriptor.name)
        if name in self._tools:
            raise ValueError(f"tool {name!r} already registered")
        self._tools[name] = descriptor

    def __contains__(self, name: str) -> bool:
        return canonical_name(name) in self._tools

    def __iter__(self):
        return iter(self._tools[k] for k in sorted(self._tools))

    def __len__(self) -> int:
        return len(self._tools)

    def names(self) -> list[str]:
        return sorted(self._tools)

    def get(self, name: str) -> ToolDescriptor:
        try:
            return self._tools[canonical_name(name)]
        except KeyError:
            raise SchemaError(f"unknown tool {name!r}") from None

    def parse(self, text: str) -> tuple[str, dict] | None:
        """Return ``(tool, args)`` when ``text`` invokes a registered tool, else None."""
        try:
            tokens = split_command(text.strip())
        except SchemaError:
            return None  # not tool syntax; let the shell complain
        if not tokens or tokens[0] not in self:
            return None
        descriptor = self.get(tokens[0])
        return descriptor.name, parse_arguments(descriptor, tokens[1:])

    def dispatch(self, name: str, args: dict, ctx: ToolContext) -> ToolResult:
        descriptor = self.get(name)
        args = validate(descriptor, args)
        if "sandbox" in descriptor.requires and ctx.sandbox is None:
            raise SchemaError(f"{descriptor.name} needs a sandbox")
        result = descriptor.handler(ctx, **{k.replace("-", "_"): v for k, v in args.items()})
        result.output, cut = _cap(result.output, descriptor.output_cap)
        result.truncated = result.truncated or cut
        ctx.warnings.extend(result.warnings)
        return result

    def describe(self) -> str:
        return "\n".join(f"- {d.usage()}: {d.summary}" for d in self)
