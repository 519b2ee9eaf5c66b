from __future__ import annotations

import json

import pytest

from envforge.agent import (
    PHASES, PLAN_TEMPLATE, Action, AutomatedState, ExpertiseRecord, ExpertiseStore, SessionTrace, TraceStep,
    accumulate_expertise, build_automated_prompt, build_standard_prompt, merge_records, normalize_error,
    parse_llm_response, parse_plan, run_automated_mode_step, run_session,
)
from envforge.agent.plan import PlanError
from envforge.clock import FrozenClock
from envforge.errors import Unparseable
from envforge.llm import BudgetLedger, LLMClient, ScriptedBackend
from envforge.plugins import PYTHON_PLUGIN, default_registry
from envforge.repo import scan_repository
from envforge.sandbox import Observation, RecipePlan
from envforge.tools import ToolContext, default_toolset

TOOLS = default_toolset()


def turn(thought, command, lang="bash"):
    return f"### Thought: {thought}\n### Action:\n```{lang}\n{command}\n```"


STOP = turn("The checks pass.", "stop", "")


# -- parsing ------------------------------------------------------------------------

def test_parse_tool_action():
    thought, action = parse_llm_response(turn("Look around.", "ls-structure --repo /repo --depth 3"), TOOLS)
    assert thought == "Look around."
    assert action.kind == "tool" and action.tool == "ls-structure"
    assert action.arguments == {"repo": "/repo", "depth": 3, "highlight": True}


def test_parse_shell_and_stop():
    _, action = parse_llm_response(turn("Version?", "cd /repo && python --version"), TOOLS)
    assert action == Action("shell", command="cd /repo && python --version")
    for reply in (STOP, "### Thought: done\n### Action:\nstop", "```\nSTOP\n```"):
        assert parse_llm_response(reply, TOOLS)[1].kind == "stop"


def test_parse_rejects_missing_fence():
    with pytest.raises(Unparseable):
        parse_llm_response("I think we should install numpy.", TOOLS)
    with pytest.raises(Unparseable):
        parse_llm_response("### Action:\n```\n\n```", TOOLS)


def test_bad_tool_arguments_are_kept_for_the_record():
    _, action = parse_llm_response(turn("x", "ls-structure --depth deep"), TOOLS)
    assert action.kind == "tool" and action.arguments is None


def test_action_invariants():
    with pytest.raises(ValueError):
        Action("shell", command="  ")
    with pytest.raises(ValueError):
        Action("tool")
    with pytest.raises(ValueError):
        Action("jump")


# -- prompts ---------------------------------------------------------------------------

def test_standard_prompt_has_workflow_and_tools(copy_repo):
    repo = scan_repository(copy_repo("minipkg"))
    system = build_standard_prompt(repo, PYTHON_PLUGIN, TOOLS, image="python:3.10-slim")[0]["content"]
    steps = [ln for ln in system.splitlines() if ln[:2] in {f"{i}." for i in range(10)}]
    assert [s[:2] for s in steps] == ["0.", "1.", "2.", "3.", "4.", "5.", "6."]
    for name in TOOLS.names():
        assert f"- {name}" in system
    assert "python:3.10-slim" in system and "/repo" in system


def test_expertise_hits_are_injected(copy_repo):
    repo = scan_repository(copy_repo("minipkg"))
    record = ExpertiseRecord("python", "modulenotfounderror: no module named 'yaml'", ["pip install pyyaml"])
    system = build_standard_prompt(repo, PYTHON_PLUGIN, TOOLS, [record])[0]["content"]
    assert "pip install pyyaml" in system


def test_go_uses_its_own_role(tmp_path):
    (tmp_path / "main.go").write_text("package main\n")
    go = default_registry().lookup("go")
    system = build_standard_prompt(scan_repository(tmp_path), go, TOOLS)[0]["content"]
    assert system.startswith(go.prompt_role)
    assert go.workflow[0] in system


def test_automated_prompt_embeds_plan_skeleton(copy_repo):
    repo = scan_repository(copy_repo("minipkg"))
    system = build_automated_prompt(repo, PYTHON_PLUGIN, TOOLS, image="python:3.10")[0]["content"]
    assert "/repo/plan.md" in system
    for phase in PHASES:
        assert phase in system


# -- plan file ----------------------------------------------------------------------------

def test_skeleton_has_four_pending_phases():
    state = parse_plan(PLAN_TEMPLATE.format(image="python:3.10", max_turns=30))
    assert [p.name for p in state.phases] == list(PHASES)
    assert {p.status for p in state.phases} == {"pending"}
    assert state.current.number == 1 and not state.done


def test_automated_step_follows_first_open_phase(tmp_path):
    state = AutomatedState(tmp_path)
    assert "does not exist" in run_automated_mode_step(state)
    text = PLAN_TEMPLATE.format(image="img", max_turns=30)
    text = text.replace("- **Status**: pending", "- **Status**: complete", 1)
    (tmp_path / "plan.md").write_text(text)
    hint = run_automated_mode_step(state)
    assert hint.startswith("Current phase: Phase 2 (Dependency Installation)")
    (tmp_path / "plan.md").write_text(text.replace("**Status**: pending", "**Status**: complete"))
    assert "All phases" in run_automated_mode_step(state)


def test_corrupt_plan_gets_one_retry(tmp_path):
    (tmp_path / "plan.md").write_text("### Phase 1: Only\n")
    state = AutomatedState(tmp_path)
    assert "Recreate it" in run_automated_mode_step(state) and not state.failed
    run_automated_mode_step(state)
    assert state.failed
    with pytest.raises(PlanError):
        parse_plan("### Phase 1: A\n- **Status**: weird\n")


# -- expertise --------------------------------------------------------------------------------

def _obs(code, out="", err=""):
    return Observation(code, out, err, 0.0, False)


def fixed_trace(repo_id="r1", module="yaml"):
    trace = SessionTrace(repo_id, "standard", "python")
    trace.append(TraceStep("", Action("tool", tool="run-pytest", arguments={}, command="run-pytest"),
                           _obs(1, "", f"E   ModuleNotFoundError: No module named '{module}'\n"
                                       f"  File \"/usr/lib/python3/site.py\", line 12"),
                           verification=False))
    trace.append(TraceStep("", Action("shell", command=f"pip install {module}"), _obs(0, "ok")))
    trace.append(TraceStep("", Action("shell", command="ls"), _obs(0, "a b")))
    trace.append(TraceStep("", Action("tool", tool="run-pytest", arguments={}, command="run-pytest"),
                           _obs(0, "2 passed"), verification=True))
    trace.append(TraceStep("", Action("stop", tool="stop", arguments={}, command="stop"), None))
    trace.close("success")
    return trace


def test_error_to_fix_pair_gives_one_record():
    record, = accumulate_expertise([fixed_trace()])
    assert record.error_signature == "modulenotfounderror: no module named 'yaml'"
    assert record.resolution_commands == ["pip install yaml"]
    assert record.success_count == 1 and record.source_traces == [fixed_trace().trace_id]


def test_duplicate_signatures_merge():
    record, = accumulate_expertise([fixed_trace("a"), fixed_trace("b")])
    assert record.success_count == 2 and len(record.source_traces) == 2


def test_failed_traces_give_nothing():
    trace = SessionTrace("r", "standard", "python")
    trace.append(TraceStep("", Action("shell", command="make"), _obs(2, "", "error: no rule")))
    trace.close("critical-failure")
    assert accumulate_expertise([trace]) == [] and accumulate_expertise([]) == []


def test_signature_normalization():
    text = "Traceback...\n  File \"/home/u/x/app.py\", line 41\nOSError: cannot load /opt/lib/libfoo.so.0 at 0xdeadbeef"
    assert normalize_error(text) == "oserror: cannot load <path> at <hex>"
    assert normalize_error("error[E0432]: unresolved import `serde`") == "error: unresolved import `serde`"
    assert normalize_error("all good") is None


def test_store_merges_on_write(tmp_path):
    store = ExpertiseStore(tmp_path / "exp.json")
    store.merge(accumulate_expertise([fixed_trace("a")]))
    store.merge(accumulate_expertise([fixed_trace("b"), fixed_trace("c", module="numpy")]))
    records = store.load()
    assert [r.success_count for r in records] == [1, 2]
    assert store.relevant("python", ["modulenotfounderror: no module named 'yaml'"])[0].success_count == 2
    assert store.relevant("rust") == []
    assert merge_records(records) == records
    with pytest.raises(ValueError):
        ExpertiseRecord("python", "x", [])


# -- sessions ---------------------------------------------------------------------------------------

FINAL = "```dockerfile\nFROM python:3.10-slim\nCOPY . /repo\nWORKDIR /repo\n```"


@pytest.fixture
def session(copy_repo, make_sandbox, engine):
    def _run(replies, turn_limit=30, token_limit=150_000, mode="standard", repo_name="minipkg", expertise=None,
             prepare=None):
        root = copy_repo(repo_name)
        if prepare:
            prepare(root)
        box = make_sandbox(root)
        repo = scan_repository(root, clock=FrozenClock())
        ledger = BudgetLedger(token_limit, turn_limit)
        backend = ScriptedBackend(replies)
        llm = LLMClient("live", backend)
        ctx = ToolContext(repo, box, llm, ledger, PYTHON_PLUGIN)
        result = run_session(repo, mode, box, llm, TOOLS, expertise, plugin=PYTHON_PLUGIN, ledger=ledger, ctx=ctx,
                             initial_plan=RecipePlan("python:3.10-slim"), engine=engine, clock=FrozenClock())
        return result, ledger, backend

    return _run


HAPPY = [
    turn("See the layout.", "ls-structure --repo /repo --depth 2"),
    turn("Read the docs.", "read-file /repo/README.md"),
    turn("Check the interpreter.", "python --version"),
    turn("Run the tests.", "run-pytest"),
    STOP,
    FINAL,
]


def test_scripted_session_succeeds(session):
    result, ledger, backend = session(list(HAPPY))
    trace = result.trace
    assert trace.outcome == "success" and result.failure is None
    assert [s.action.kind for s in trace.steps] == ["tool", "tool", "shell", "tool", "stop"]
    assert trace.steps[3].verification is True
    assert result.recipe.startswith("FROM python:3.10-slim") and trace.recipe_source == "llm"
    assert ledger.turns_used == len(trace.steps) + trace.wasted_turns == 5
    assert backend._replies == []


def test_session_trace_is_deterministic(session):
    one = session(list(HAPPY))[0].trace.dumps()
    two = session(list(HAPPY))[0].trace.dumps()
    assert one == two


def test_stop_without_passing_check_is_critical(session):
    result, _, _ = session([turn("Done?", "python --version"), STOP])
    assert result.trace.outcome == "critical-failure"
    assert result.failure == "stopped without a passing check" and result.recipe is None


def test_later_failed_check_overrides_earlier_pass(session):
    def prepare(root):
        (root / "tests" / "test_extra.py").write_text("import os\n\ndef test_flag():\n"
                                                     "    assert not os.path.exists('flag')\n")
    replies = [turn("t", "run-pytest"), turn("t", "touch /repo/flag"), turn("t", "run-pytest"), STOP]
    result, _, _ = session(replies, prepare=prepare)
    assert [s.verification for s in result.trace.steps[:3]] == [True, None, False]
    assert result.trace.outcome == "critical-failure"


def test_unparseable_replies_reprompt_then_waste_turns(session):
    result, ledger, backend = session(["no idea"] * 9, turn_limit=3)
    trace = result.trace
    assert trace.outcome == "budget-exhausted"
    assert backend.calls == 9 and trace.steps == [] and trace.wasted_turns == 3
    assert ledger.turns_used == 3


def test_reprompt_recovers_within_turn(session):
    result, _, backend = session(["hmm", turn("t", "run-pytest"), STOP, FINAL])
    assert result.trace.outcome == "success"
    assert result.trace.steps[0].reprompts == 1 and result.trace.wasted_turns == 0


def test_turn_limit_is_honored(session):
    replies = [turn("t", f"echo {i}") for i in range(31)]
    result, ledger, backend = session(replies, turn_limit=30)
    assert result.trace.outcome == "budget-exhausted"
    assert len(result.trace.steps) == 30 and ledger.turns_used == 30
    assert backend._replies == [replies[30]]  # the 31st reply was never requested


def test_token_budget_ends_session(session):
    result, ledger, backend = session([turn("t", "true")], token_limit=50)
    assert result.trace.outcome == "budget-exhausted" and backend.calls == 0
    assert ledger.turns_used == len(result.trace.steps) + result.trace.wasted_turns


def test_tool_errors_become_observations(session):
    replies = [turn("t", "read-file /repo/missing.txt"), turn("t", "ls-structure --depth zero"),
               turn("t", "run-pytest"), STOP, FINAL]
    result, _, _ = session(replies)
    first, second = result.trace.steps[:2]
    assert first.error == "schema-error" and first.observation.exit_code == 1
    assert "expects int" in second.observation.stderr
    assert result.trace.outcome == "success"


def test_automated_session_with_corrupt_plan_fails(session):
    result, _, _ = session([turn("t", "true")] * 3, mode="automated",
                           prepare=lambda root: (root / "plan.md").write_text("garbage\n"))
    assert result.trace.outcome == "critical-failure"
    assert result.failure == "plan file could not be regenerated"


def test_expertise_reaches_the_prompt(session, tmp_path):
    store = ExpertiseStore(tmp_path / "exp.json")
    store.merge(accumulate_expertise([fixed_trace()]))
    seen = []

    def reply(messages):
        seen.append(messages[0]["content"])
        return STOP

    session(reply, turn_limit=1, expertise=store)
    assert "pip install yaml" in seen[0]


def test_global_timeout_is_critical(copy_repo, make_sandbox):
    root = copy_repo("minipkg")
    box = make_sandbox(root, global_timeout=1)
    repo = scan_repository(root)
    ledger = BudgetLedger()
    llm = LLMClient("live", ScriptedBackend([turn("t", "sleep 5")]))
    result = run_session(repo, "standard", box, llm, TOOLS, plugin=PYTHON_PLUGIN, ledger=ledger,
                         ctx=ToolContext(repo, box), clock=FrozenClock())
    assert result.trace.outcome == "critical-failure" and result.failure == "global-timeout"


def test_trace_roundtrip_and_tamper_detection(session):
    trace = session(list(HAPPY))[0].trace
    text = trace.dumps()
    again = SessionTrace.loads(text)
    assert again.dumps() == text
    data = json.loads(text)
    data["steps"][0]["thought"] = "edited"
    with pytest.raises(ValueError, match="checksum"):
        SessionTrace.from_dict(data)
    data["schema"] = "other"
    with pytest.raises(ValueError, match="schema"):
        SessionTrace.from_dict(data)


def test_trace_closes_once():
    trace = SessionTrace("r", "standard")
    trace.close("success")
    with pytest.raises(ValueError):
        trace.close("critical-failure")
    with pytest.raises(ValueError):
        trace.append(TraceStep("", Action("stop"), None))
