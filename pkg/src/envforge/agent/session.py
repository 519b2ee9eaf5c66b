"""The ReAct setup loop and its serialized trace."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field

from .. import canonical
from ..clock import SystemClock
from ..errors import (
    BudgetExceeded, EnvForgeError, FinalizeFailure, GlobalTimeout, LLMError, SandboxLost, Unparseable,
)
from ..plugins import matches_verify_command
from ..sandbox import Observation, finalize_recipe
from .actions import Action, parse_llm_response
from .expertise import normalize_error
from .plan import AutomatedState, run_automated_mode_step
from .prompts import REPROMPT, build_automated_prompt, build_standard_prompt

log = logging.getLogger(__name__)

TRACE_SCHEMA = "envforge.trace"
TRACE_VERSION = 1
MODES = ("standard", "automated")
OUTCOMES = ("success", "critical-failure", "budget-exhausted")
MAX_REPROMPTS = 2
FULL_HISTORY = 6  # most recent steps whose observations are replayed in full


@dataclass
class TraceStep:
    thought: str
    action: Action
    observation: Observation | None
    reply: str = ""
    verification: bool | None = None
    reprompts: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {"thought": self.thought, "action": self.action.to_dict(),
                "observation": self.observation.to_dict() if self.observation else None,
                "reply": self.reply, "verification": self.verification, "reprompts": self.reprompts,
                "error": self.error}

    @classmethod
    def from_dict(cls, data: dict) -> "TraceStep":
        obs = data.get("observation")
        return cls(data["thought"], Action.from_dict(data["action"]), Observation.from_dict(obs) if obs else None,
                   data.get("reply", ""), data.get("verification"), data.get("reprompts", 0), data.get("error"))


@dataclass
class SessionTrace:
    repo_id: str
    mode: str
    language: str = ""
    image: str = ""
    steps: list[TraceStep] = field(default_factory=list)
    outcome: str | None = None
    ledger: dict = field(default_factory=dict)
    started: str = ""
    ended: str = ""
    wasted_turns: int = 0
    recipe: str | None = None
    recipe_source: str | None = None
    failure: str | None = None
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    def append(self, step: TraceStep) -> None:
        if self.outcome is not None:
            raise ValueError("trace is closed")
        self.steps.append(step)

    def close(self, outcome: str, failure: str | None = None) -> None:
        if self.outcome is not None:
            raise ValueError("outcome already set")
        if outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {outcome!r}")
        self.outcome = outcome
        self.failure = failure

    def body(self) -> dict:
        return {
            "schema": TRACE_SCHEMA, "version": TRACE_VERSION,
            "repo_id": self.repo_id, "mode": self.mode, "language": self.language, "image": self.image,
            "steps": [s.to_dict() for s in self.steps], "outcome": self.outcome, "ledger": self.ledger,
            "started": self.started, "ended": self.ended, "wasted_turns": self.wasted_turns,
            "recipe": self.recipe, "recipe_source": self.recipe_source, "failure": self.failure,
            "notes": list(self.notes),
        }

    @property
    def trace_id(self) -> str:
        return canonical.digest(self.body())[:16]

    def to_dict(self) -> dict:
        body = self.body()
        return {**body, "checksum": _checksum(body)}

    def dumps(self) -> str:
        return canonical.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict, verify: bool = True) -> "SessionTrace":
        if data.get("schema") != TRACE_SCHEMA or data.get("version") != TRACE_VERSION:
            raise ValueError(f"unsupported trace schema {data.get('schema')!r} v{data.get('version')!r}")
        body = {k: v for k, v in data.items() if k != "checksum"}
        if verify and data.get("checksum") != _checksum(body):
            raise ValueError("trace checksum mismatch")
        trace = cls(body["repo_id"], body["mode"], body.get("language", ""), body.get("image", ""),
                    [TraceStep.from_dict(s) for s in body["steps"]], None, body.get("ledger", {}),
                    body.get("started", ""), body.get("ended", ""), body.get("wasted_turns", 0),
                    body.get("recipe"), body.get("recipe_source"), None, list(body.get("notes", [])))
        trace.outcome, trace.failure = body.get("outcome"), body.get("failure")
        return trace

    @classmethod
    def loads(cls, text: str, verify: bool = True) -> "SessionTrace":
        return cls.from_dict(json.loads(text), verify)


def _checksum(body: dict) -> str:
    return "sha256:" + hashlib.sha256(canonical.dumps(body).encode()).hexdigest()


@dataclass
class SessionResult:
    trace: SessionTrace
    recipe: str | None
    image: str | None
    failure: str | None = None
    finalize: object = None

    @property
    def outcome(self) -> str:
        return self.trace.outcome


def _tool_observation(text: str, ok: bool, truncated: bool, duration: float) -> Observation:
    return Observation(0 if ok else 1, text if ok else "", "" if ok else text, duration, truncated)


def _history(steps: list[TraceStep], max_turns: int) -> list[dict]:
    out = []
    cutoff = len(steps) - FULL_HISTORY
    for i, step in enumerate(steps):
        out.append({"role": "assistant", "content": step.reply})
        obs = step.observation.render() if step.observation else (step.error or "")
        if i < cutoff:  # older turns are shortened to keep prompts bounded
            lines = obs.splitlines()
            obs = "\n".join(lines[:3]) + (f"\n[... {len(lines) - 3} more lines]" if len(lines) > 3 else "")
        out.append({"role": "user", "content": f"Observation (turn {i + 1} of {max_turns}):\n{obs}"})
    return out


def run_session(repo, mode: str, sandbox, llm, toolset, expertise=None, *, plugin, ledger, ctx,
                initial_plan=None, engine=None, clock=None, command_timeout: float = 600.0,
                finalize: bool = True) -> SessionResult:
    """Drive one setup session to success, critical failure or budget exhaustion.

    Always returns a trace. The recipe is finalized only on success.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    clock = clock or SystemClock()
    trace = SessionTrace(repo.name, mode, plugin.language, sandbox.image, started=clock.now())
    build = build_standard_prompt if mode == "standard" else build_automated_prompt
    auto = AutomatedState(sandbox.workspace) if mode == "automated" else None
    seen_signatures: list[str] = []
    last_verification: bool | None = None
    outcome, failure = None, None

    def expertise_hits():
        if expertise is None:
            return []
        return expertise.relevant(plugin.language, seen_signatures) if seen_signatures else \
            expertise.relevant(plugin.language, limit=3)

    while outcome is None:
        try:
            ledger.begin_turn()
        except BudgetExceeded as exc:
            outcome, failure = "budget-exhausted", str(exc)
            break
        guidance = run_automated_mode_step(auto) if auto else ""
        if auto and auto.failed:
            outcome, failure = "critical-failure", "plan file could not be regenerated"
            break
        messages = build(repo, plugin, toolset, expertise_hits(), sandbox.image, ledger.turn_limit,
                         ctx.workdir) + _history(trace.steps, ledger.turn_limit)
        if guidance:
            messages[-1] = {"role": messages[-1]["role"], "content": messages[-1]["content"] + "\n\n" + guidance}
        parsed, reply, reprompts = None, "", 0
        try:
            while True:
                reply = llm.complete(messages, ledger).reply
                try:
                    parsed = parse_llm_response(reply, toolset)
                    break
                except Unparseable as exc:
                    if reprompts >= MAX_REPROMPTS:
                        break
                    reprompts += 1
                    messages = messages + [{"role": "assistant", "content": reply},
                                           {"role": "user", "content": REPROMPT.format(error=exc)}]
        except BudgetExceeded as exc:
            trace.wasted_turns += 1  # the turn was started but produced no step
            outcome, failure = "budget-exhausted", str(exc)
            break
        except LLMError as exc:
            trace.wasted_turns += 1
            outcome, failure = "critical-failure", f"{exc.code}: {exc}"
            break
        if parsed is None:
            trace.wasted_turns += 1
            continue
        thought, action = parsed
        step = TraceStep(thought, action, None, reply, reprompts=reprompts)
        if action.kind == "stop":
            trace.append(step)
            if last_verification:
                outcome = "success"
            else:
                outcome, failure = "critical-failure", "stopped without a passing check"
            break
        started = time.monotonic()
        try:
            if action.kind == "tool":
                try:
                    args = action.arguments
                    if args is None:
                        args = toolset.parse(action.command)[1]  # raises the schema error for the record
                    result = toolset.dispatch(action.tool, args, ctx)
                    ok = result.verification is not False
                    step.observation = _tool_observation(result.output, ok, result.truncated,
                                                         clock.measure(time.monotonic() - started))
                    if result.verification is not None:
                        step.verification = result.verification
                    if result.stop:
                        trace.append(step)
                        outcome = "success" if last_verification else "critical-failure"
                        failure = None if last_verification else "stopped without a passing check"
                        break
                except (GlobalTimeout, SandboxLost):
                    raise
                except EnvForgeError as exc:
                    step.error = exc.code
                    step.observation = _tool_observation(f"error[{exc.code}]: {exc}", False, False,
                                                         clock.measure(time.monotonic() - started))
            else:
                step.observation = sandbox.exec(action.command, command_timeout)
                if matches_verify_command(action.command, plugin, repo):
                    step.verification = step.observation.exit_code == 0
        except (GlobalTimeout, SandboxLost) as exc:
            step.error = exc.code
            obs = exc.details.get("observation")
            step.observation = obs or Observation(None, "", f"error[{exc.code}]: {exc}",
                                                  clock.measure(time.monotonic() - started))
            trace.append(step)
            outcome, failure = "critical-failure", exc.code
            break
        if step.verification is not None:
            last_verification = step.verification
        if step.observation is not None and step.observation.exit_code != 0:
            sig = normalize_error(step.observation.stdout + "\n" + step.observation.stderr)
            if sig and sig not in seen_signatures:
                seen_signatures.append(sig)
        trace.append(step)
        if ctx is not None:
            ctx.refresh()

    result = SessionResult(trace, None, None)
    if outcome == "success" and finalize and initial_plan is not None and engine is not None:
        plan = sandbox.plan or initial_plan
        try:
            fin = finalize_recipe(plan, trace, llm, ledger, engine, sandbox.workspace)
            trace.recipe, trace.recipe_source = fin.text, fin.source
            result.recipe, result.image, result.finalize = fin.text, fin.image, fin
        except FinalizeFailure as exc:
            outcome, failure = "critical-failure", exc.code
            trace.notes.append(f"finalize failed: {exc}")
    trace.ledger = ledger.snapshot()
    trace.ended = clock.now()
    trace.close(outcome, failure)
    result.failure = failure
    return result
