"""Sandbox lifecycle, bounded command execution, pre-flight builds and recipe finalization."""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..clock import SystemClock
from ..errors import (
    BudgetExceeded, BuildFailure, FinalizeFailure, GlobalTimeout, InvalidState, LLMError, RolledBack,
    SandboxCreateFailure, VersionSwitchUnsupported,
)
from .engine import KILL_GRACE, BuildResult, Engine
from .recipe import RecipePlan, parse_recipe, render_recipe

log = logging.getLogger(__name__)

COMMAND_TIMEOUT = 600.0
GLOBAL_TIMEOUT = 7200.0
STREAM_CAP = 64 * 1024
HEAD_BYTES = 16 * 1024
STATES = ("created", "running", "stopped", "destroyed")
_NEXT_STATE = {"created": {"running", "destroyed"}, "running": {"stopped", "destroyed"},
               "stopped": {"destroyed"}, "destroyed": set()}


def cap_stream(data: bytes, cap: int = STREAM_CAP, head: int = HEAD_BYTES) -> tuple[bytes, bool]:
    """Keep the first ``head`` bytes and as much of the tail as fits in ``cap`` including a marker."""
    if len(data) <= cap:
        return data, False
    dropped = len(data) - cap
    marker = f"\n[... {dropped} bytes omitted ...]\n".encode()
    tail = cap - head - len(marker)
    return data[:head] + marker + data[len(data) - tail:], True


@dataclass
class Observation:
    exit_code: int | None
    stdout: str
    stderr: str
    duration: float
    truncated: bool = False

    @property
    def timed_out(self) -> bool:
        return self.exit_code is None

    @property
    def ok(self) -> bool:
        return self.exit_code == 0

    def to_dict(self) -> dict:
        return {"exit_code": self.exit_code, "stdout": self.stdout, "stderr": self.stderr,
                "duration": self.duration, "truncated": self.truncated}

    @classmethod
    def from_dict(cls, data: dict) -> "Observation":
        return cls(**data)

    def render(self) -> str:
        status = "timed out" if self.timed_out else f"exit code {self.exit_code}"
        parts = [f"[{status}]"]
        if self.stdout:
            parts.append(self.stdout.rstrip("\n"))
        if self.stderr:
            parts.append("[stderr]\n" + self.stderr.rstrip("\n"))
        return "\n".join(parts)


@dataclass
class Sandbox:
    container_id: str
    image: str
    engine: Engine
    workspace: Path
    plan: RecipePlan | None = None
    state: str = "created"
    snapshots: list[str] = field(default_factory=list)
    deadline: float = 0.0  # time.monotonic() value
    deadline_at: str = ""
    workdir: str = "/repo"
    cap: int = STREAM_CAP
    clock: object = field(default_factory=SystemClock, repr=False)

    def _move(self, state: str) -> None:
        if state not in _NEXT_STATE[self.state]:
            raise InvalidState(f"sandbox cannot go from {self.state} to {state}")
        self.state = state

    def remaining(self) -> float:
        return self.deadline - time.monotonic()

    def exec(self, command: str, timeout: float = COMMAND_TIMEOUT) -> Observation:
        if self.state != "running":
            raise InvalidState(f"sandbox is {self.state}, not running")
        left = self.remaining()
        if left <= 0:
            raise GlobalTimeout("global time budget used up")
        limit = min(timeout, left)
        res = self.engine.exec(self.container_id, command, limit, self.workdir)
        out, cut_out = cap_stream(res.stdout, self.cap)
        err, cut_err = cap_stream(res.stderr, self.cap)
        obs = Observation(res.exit_code, out.decode("utf-8", errors="replace"), err.decode("utf-8", errors="replace"),
                          self.clock.measure(res.duration), cut_out or cut_err)
        if obs.timed_out and limit < timeout:
            raise GlobalTimeout("global time budget ran out during a command", observation=obs)
        return obs

    def read_file(self, path: str) -> bytes:
        self._require_live()
        return self.engine.read_file(self.container_id, path)

    def write_file(self, path: str, data: bytes) -> None:
        self._require_live()
        self.engine.write_file(self.container_id, path, data)

    def _require_live(self) -> None:
        if self.state not in ("running", "stopped"):
            raise InvalidState(f"sandbox is {self.state}")

    def snapshot(self) -> str:
        self._require_live()
        ref = self.engine.commit(self.container_id)
        self.snapshots.append(ref)
        return ref

    def stop(self) -> None:
        self._move("stopped")

    def destroy(self) -> None:
        if self.state == "destroyed":
            return
        self._move("destroyed")
        self.engine.remove(self.container_id)


@dataclass
class PreflightResult:
    image: str
    base_image: str
    rung: int
    log: str
    attempts: list[tuple[str, str]] = field(default_factory=list)  # (base image, log)


def preflight_build(plan: RecipePlan, engine: Engine, fallbacks: list[str] | tuple[str, ...] = (),
                    context: Path | None = None) -> PreflightResult:
    """Build ``plan``; on failure retry with each fallback base image in turn.

    ``rung`` in the result is 0 for the plan's own base image and i for the
    i-th distinct fallback.
    """
    engine.ping()
    bases: list[str] = []
    for base in (plan.base_image, *fallbacks):
        if base and base not in bases:
            bases.append(base)
    attempts: list[tuple[str, str]] = []
    for rung, base in enumerate(bases):
        candidate = replace(plan, base_image=base)
        res: BuildResult = engine.build(render_recipe(candidate), context)
        attempts.append((base, res.log))
        if res.ok:
            return PreflightResult(res.image, base, rung, res.log, attempts)
        log.warning("pre-flight build failed on %s", base)
    raise BuildFailure(f"all {len(bases)} pre-flight rungs failed", log=attempts[-1][1] if attempts else "",
                       attempts=attempts)


def create_sandbox(image: str, engine: Engine, workspace: Path | str, global_timeout: float = GLOBAL_TIMEOUT,
                   plan: RecipePlan | None = None, clock=None, cap: int = STREAM_CAP) -> Sandbox:
    clock = clock or SystemClock()
    workspace = Path(workspace)
    try:
        cid = engine.create(image, workspace)
    except SandboxCreateFailure:
        raise
    except BuildFailure as exc:
        raise SandboxCreateFailure(str(exc)) from exc
    box = Sandbox(cid, image, engine, workspace, plan=plan, clock=clock, cap=cap,
                  deadline=time.monotonic() + global_timeout, deadline_at=clock.now())
    box._move("running")
    return box


def change_runtime_version(sandbox: Sandbox, plugin, version: str, fallbacks=()) -> Sandbox:
    """Snapshot, rebuild on ``plugin``'s runtime at ``version`` and move to a fresh container.

    The workspace carries over; packages installed in the old container do
    not. Any failure restores the snapshot and keeps the old container.
    """
    if not plugin.version_switch:
        raise VersionSwitchUnsupported(f"no runtime switching for {plugin.language}")
    if sandbox.state != "running":
        raise InvalidState(f"sandbox is {sandbox.state}, not running")
    snap = sandbox.snapshot()
    base = plugin.runtime.reference(version)
    plan = replace(sandbox.plan or RecipePlan(base_image=base), base_image=base)
    engine = sandbox.engine
    try:
        built = engine.build(render_recipe(plan))
        if not built.ok:
            raise BuildFailure(f"could not build {base}", log=built.log)
        new_cid = engine.create(built.image, sandbox.workspace, sandbox.workdir)
    except (BuildFailure, SandboxCreateFailure) as exc:
        engine.restore(sandbox.container_id, snap)
        raise RolledBack(f"switch to {base} failed, previous state restored: {exc}",
                         snapshot=snap, log=getattr(exc, "log", "")) from exc
    engine.remove(sandbox.container_id)
    sandbox.container_id = new_cid
    sandbox.image = built.image
    sandbox.plan = plan
    return sandbox


# -- recipe finalization ----------------------------------------------------

INSTALL_LIKE = re.compile(
    r"\b(install|add|download|fetch|config|configure|setup|build|apt|apt-get|apk|yum|dnf|sync|restore|"
    r"update|get|venv|virtualenv|export|ln|mkdir|cp|make)\b"
)
_READONLY = re.compile(r"^\s*(ls|cat|head|tail|echo|pwd|find|grep|which|tree|wc|env|printenv|whoami|uname)\b")

FINALIZE_PROMPT = """Write the final container build file for this repository.

Start from the initial build file below and add the shell commands that succeeded during the interactive setup session, in the order they ran, leaving out exploration and anything that only inspected state. The source tree is available as the build context.

Initial build file:
```
{initial}
```

Successful commands, in order:
{commands}

Reply with the complete build file inside one fenced code block and nothing else."""


@dataclass
class FinalizeResult:
    text: str
    source: str  # "initial", "llm" or "mechanical"
    image: str | None = None
    logs: dict[str, str] = field(default_factory=dict)

    @property
    def fallback_used(self) -> bool:
        return self.source == "mechanical"


def successful_commands(trace) -> list[str]:
    """Shell commands from a trace (or a list of steps) that exited zero."""
    steps = getattr(trace, "steps", trace) or []
    out = []
    for step in steps:
        action, obs = step.action, step.observation
        if action.kind == "shell" and obs is not None and obs.exit_code == 0 and action.command:
            out.append(action.command)
    return out


def install_like(commands: list[str]) -> list[str]:
    return [c for c in commands if INSTALL_LIKE.search(c) and not _READONLY.match(c)]


def _fenced(text: str) -> str:
    m = re.search(r"```[\w-]*\n(.*?)```", text, re.S)
    return (m.group(1) if m else text).strip() + "\n"


def _try_build(text: str, engine: Engine, context: Path | None = None) -> tuple[bool, str, str | None]:
    try:
        parse_recipe(text)
    except ValueError as exc:
        return False, f"invalid recipe: {exc}", None
    res = engine.build(text, context)
    return res.ok, res.log, res.image


def finalize_recipe(initial: RecipePlan, trace, llm, ledger, engine: Engine,
                    context: Path | None = None) -> FinalizeResult:
    """Turn the initial plan plus the successful session commands into the final recipe."""
    commands = successful_commands(trace)
    if not commands:
        return FinalizeResult(render_recipe(initial), "initial")
    logs: dict[str, str] = {}
    if llm is not None:
        prompt = FINALIZE_PROMPT.format(initial=render_recipe(initial).strip(),
                                        commands="\n".join(f"- {c}" for c in commands))
        try:
            reply = llm.complete([{"role": "user", "content": prompt}], ledger).reply
        except (LLMError, BudgetExceeded) as exc:
            logs["llm"] = f"completion failed: {exc}"
        else:
            text = _fenced(reply)
            ok, build_log, image = _try_build(text, engine, context)
            if ok:
                return FinalizeResult(text, "llm", image, logs)
            logs["llm"] = build_log
    mechanical = replace(initial, copy_source=True,
                         setup_steps=tuple(initial.setup_steps) + tuple(install_like(commands)))
    text = render_recipe(mechanical)
    ok, build_log, image = _try_build(text, engine, context)
    if ok:
        return FinalizeResult(text, "mechanical", image, logs)
    logs["mechanical"] = build_log
    raise FinalizeFailure("neither the consolidated nor the mechanical recipe builds", logs=logs)


__all__ = [
    "COMMAND_TIMEOUT", "GLOBAL_TIMEOUT", "KILL_GRACE", "STREAM_CAP", "FinalizeResult", "Observation",
    "PreflightResult", "Sandbox", "cap_stream", "change_runtime_version", "create_sandbox", "finalize_recipe",
    "install_like", "preflight_build", "successful_commands",
]
