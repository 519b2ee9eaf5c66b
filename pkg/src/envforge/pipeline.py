"""End-to-end configuration of one repository, scoring, and batch evaluation."""

from __future__ import annotations

import logging
import re
import shutil
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import canonical
from .agent import ExpertiseStore, SessionTrace, accumulate_expertise, run_session
from .clock import FrozenClock, SystemClock
from .config import RunConfig
from .errors import (
    EXIT_BUDGET, EXIT_SUCCESS, BudgetExceeded, CloneFailure, EnvForgeError, RunnerAbsent, UndefinedESSR,
    exit_code_for,
)
from .evaluation import (
    EvalRecord, TestOutcome, aggregate_report, build_success, classify_scenario, compute_essr, restrict_to_verified,
    render_table, scenario_flags, DefectCache,
)
from .images import AllowedVersions, DockerHubClient, select_base_image
from .llm import BudgetLedger, HTTPBackend, LLMClient
from .plugins import PluginRegistry, default_registry
from .repo import detect_artifacts, dominant_language, scan_repository
from .sandbox import RecipePlan, create_sandbox, make_engine, preflight_build
from .tools import ToolContext, default_toolset
from .tools.retrieval import StackExchangeClient
from .tools.testing import construct_test, run_pytest, run_test

log = logging.getLogger(__name__)

_URL = re.compile(r"^(?:https?|ssh|git|file)://|^[\w.-]+@[\w.-]+:")
_UNSAFE = re.compile(r"[^A-Za-z0-9._-]+")


def is_url(source: str) -> bool:
    return bool(_URL.match(source))


def repo_id_for(source: str) -> str:
    name = source.rstrip("/").rsplit("/", 1)[-1].rsplit(":", 1)[-1]
    name = name[:-4] if name.endswith(".git") else name
    return _UNSAFE.sub("-", name).strip("-.") or "repository"


def _git(*args: str, cwd: Path | None = None) -> None:
    try:
        res = subprocess.run(["git", *args], cwd=cwd, capture_output=True, text=True, timeout=900)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise CloneFailure(f"git {args[0]} failed: {exc}") from None
    if res.returncode != 0:
        raise CloneFailure(f"git {args[0]} failed: {res.stderr.strip()[-1000:]}")


def fetch_source(source: str, dest: Path, revision: str | None = None) -> Path:
    """Shallow-clone a URL (optionally at ``revision``) or copy a local tree into ``dest``."""
    if is_url(source):
        dest.mkdir(parents=True)
        _git("init", "-q", cwd=dest)
        _git("remote", "add", "origin", source, cwd=dest)
        _git("fetch", "-q", "--depth", "1", "origin", revision or "HEAD", cwd=dest)
        _git("checkout", "-q", "FETCH_HEAD", cwd=dest)
        return dest
    src = Path(source)
    if not src.is_dir():
        raise CloneFailure(f"no repository at {source}")
    shutil.copytree(src, dest, symlinks=True)
    return dest


@dataclass
class Score:
    scenario: str
    essr: float | None = None
    build_success: bool | None = None
    outcome: TestOutcome | None = None
    undefined: bool = False
    flags: list[str] = field(default_factory=list)
    log: str = ""

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "essr": self.essr, "build_success": self.build_success,
                "undefined_essr": self.undefined, "flags": list(self.flags),
                "tests": self.outcome.to_dict() if self.outcome else None}


def score_environment(repo, artifacts, plugin, sandbox, command_timeout: float = 600.0,
                      defects: list[str] | None = None) -> Score:
    """ESSR for plugins scored by test report, build success for the others."""
    scenario = classify_scenario(repo, artifacts)
    score = Score(scenario.value, flags=scenario_flags(artifacts))
    if plugin.scoring != "test-report":
        ok, build_log = build_success(sandbox, plugin.resolve_verify_commands(repo), command_timeout)
        score.build_success, score.log = ok, build_log
        return score
    try:
        if scenario.value == "S3":
            outcome, text = run_test(sandbox, construct_test(repo, plugin, sandbox.workdir), plugin, kind="run",
                                     repo=repo)
        else:
            outcome, text = run_pytest(sandbox)
    except RunnerAbsent as exc:
        outcome, text = TestOutcome(), str(exc)
    if defects:
        outcome = restrict_to_verified(outcome, defects)
    score.outcome, score.log = outcome, text
    try:
        score.essr = compute_essr(outcome, scenario)
    except UndefinedESSR:
        score.undefined = True
    return score


@dataclass
class ConfigureOutput:
    repo_id: str
    outcome: str
    exit_code: int
    out_dir: Path
    trace: SessionTrace
    recipe: str | None = None
    image: str | None = None
    failure: str | None = None
    score: Score | None = None
    language: str = ""
    latency: float = 0.0
    tokens: int = 0

    def summary(self) -> dict:
        return {
            "repo_id": self.repo_id, "outcome": self.outcome, "exit_code": self.exit_code,
            "failure": self.failure, "language": self.language, "image": self.image,
            "recipe_source": self.trace.recipe_source, "turns": self.trace.ledger.get("turns_used"),
            "tokens": self.tokens, "latency": self.latency, "wasted_turns": self.trace.wasted_turns,
            "score": self.score.to_dict() if self.score else None, "notes": list(self.trace.notes),
        }


def make_llm(config: RunConfig, backend=None) -> LLMClient:
    if config.driver == "replay":
        return LLMClient("replay", fixture=config.fixture, temperature=config.temperature)
    backend = backend or HTTPBackend(config.llm_base_url, config.llm_model)
    return LLMClient(config.driver, backend, fixture=config.fixture, temperature=config.temperature)


def make_engine_for(config: RunConfig):
    if config.engine == "local":
        allowed = set(config.available_images) if config.available_images is not None else None
        return make_engine("local", available_images=allowed)
    return make_engine(config.engine)


def _clock(config: RunConfig):
    # replayed sessions must serialize identically, so their timestamps and durations are pinned
    return FrozenClock() if config.frozen_clock or config.driver == "replay" else SystemClock()


def _write_outputs(out: ConfigureOutput) -> None:
    out.out_dir.mkdir(parents=True, exist_ok=True)
    (out.out_dir / "trace.json").write_text(out.trace.dumps(), encoding="utf-8")
    recipe_path = out.out_dir / "recipe"
    if out.recipe is not None:
        recipe_path.write_text(out.recipe, encoding="utf-8")
    elif recipe_path.exists():
        recipe_path.unlink()
    canonical.write(out.out_dir / "summary.json", out.summary())


def configure(source: str, config: RunConfig, *, repo_id: str | None = None, revision: str | None = None,
              llm: LLMClient | None = None, engine=None, plugins: PluginRegistry | None = None,
              registry_client=None, web_client=None, evaluate: bool = True) -> ConfigureOutput:
    """Fetch, select an image, pre-flight build, run the agent, finalize and score.

    Always writes ``trace.json`` and ``summary.json`` under ``<output_dir>/<repo-id>``;
    ``recipe`` is written when the session succeeded.
    """
    clock = _clock(config)
    started = time.monotonic()
    repo_id = repo_id or repo_id_for(source)
    out_dir = Path(config.output_dir) / repo_id
    plugins = plugins or default_registry()
    ledger = BudgetLedger(config.token_limit, config.turn_limit)
    trace = SessionTrace(repo_id, config.mode, started=clock.now())
    result = None
    score = None
    sandboxes = []
    with tempfile.TemporaryDirectory(prefix="envforge-ws-") as tmp:
        try:
            llm = llm or make_llm(config)
            engine = engine or make_engine_for(config)
            if config.driver != "replay":
                if registry_client is None and config.registry_search:
                    registry_client = DockerHubClient()
                if web_client is None and config.web_search:
                    web_client = StackExchangeClient()
            workspace = fetch_source(source, Path(tmp) / repo_id, revision)
            repo = scan_repository(workspace, name=repo_id, clock=clock)
            artifacts = detect_artifacts(repo)
            scenario = classify_scenario(repo, artifacts)
            plugin = plugins.lookup(dominant_language(repo).dominant)
            trace.language = plugin.language
            allowed = AllowedVersions.load(config.allowed_versions)
            selection = select_base_image(repo, artifacts, llm, ledger, allowed, plugins, registry_client,
                                          plugin.language)
            trace.notes.extend(selection.warnings)
            plan = RecipePlan(
                base_image=selection.selected.reference,
                mirror_config_steps=tuple(plugin.render_mirror_steps(config.mirrors)),
                toolset_injection_steps=tuple(plugin.runner_install),
                labels={"envforge.repo": repo_id},
            )
            fallbacks = [c.reference for c in selection.candidates if c.source == "default-pool"]
            fallbacks.append(plugin.runtime.reference())
            pre = preflight_build(plan, engine, fallbacks, context=workspace)
            if pre.rung:
                trace.notes.append(f"pre-flight fell back to {pre.base_image} (rung {pre.rung})")
            plan = replace(plan, base_image=pre.base_image)
            sandbox = create_sandbox(pre.image, engine, workspace, config.global_timeout, plan=plan, clock=clock)
            sandboxes.append(sandbox)
            expertise = ExpertiseStore(config.expertise_store) if config.expertise_store else None
            ctx = ToolContext(repo, sandbox, llm, ledger, plugin, plugins, allowed, registry_client, web_client,
                              config.issue_db, dict(config.mirrors))
            result = run_session(repo, config.mode, sandbox, llm, default_toolset(), expertise, plugin=plugin,
                                 ledger=ledger, ctx=ctx, initial_plan=plan, engine=engine, clock=clock,
                                 command_timeout=config.command_timeout)
            trace = result.trace
            if result.outcome == "success":
                result.image = result.image or pre.image
                if expertise is not None:
                    expertise.merge(accumulate_expertise([trace]))
                if evaluate:
                    sandbox.destroy()
                    fresh = create_sandbox(result.image, engine, workspace, config.global_timeout, plan=plan,
                                           clock=clock)
                    sandboxes.append(fresh)
                    defects = DefectCache(Path(config.output_dir) / "defects.json").get(repo_id)
                    score = score_environment(ctx.refresh(), artifacts, plugin, fresh, config.command_timeout,
                                              defects)
            elif evaluate:
                # a failed setup passes nothing
                tested = plugin.scoring == "test-report"
                score = Score(scenario.value, 0.0 if tested else None, None if tested else False,
                              flags=scenario_flags(artifacts))
        except EnvForgeError as exc:
            if trace.outcome is None:
                trace.ledger = ledger.snapshot()
                trace.ended = clock.now()
                trace.close("budget-exhausted" if isinstance(exc, BudgetExceeded) else "critical-failure", exc.code)
                trace.notes.append(f"{exc.code}: {exc}")
            else:
                trace.notes.append(f"scoring failed: {exc.code}: {exc}")
        finally:
            for box in sandboxes:
                try:
                    box.destroy()
                except EnvForgeError:
                    pass
    if trace.outcome == "success":
        code = EXIT_SUCCESS
    elif trace.outcome == "budget-exhausted":
        code = EXIT_BUDGET
    else:
        code = exit_code_for(trace.failure)
    out = ConfigureOutput(repo_id, trace.outcome, code, out_dir, trace,
                          result.recipe if result and trace.outcome == "success" else None,
                          result.image if result and trace.outcome == "success" else None,
                          trace.failure, score, trace.language, clock.measure(time.monotonic() - started),
                          ledger.tokens_used)
    _write_outputs(out)
    return out


# -- batch evaluation ---------------------------------------------------------------

@dataclass
class ManifestEntry:
    source: str
    id: str | None = None
    revision: str | None = None
    fixture: str | None = None

    @classmethod
    def from_dict(cls, data: dict | str) -> "ManifestEntry":
        if isinstance(data, str):
            return cls(data)
        return cls(data["source"], data.get("id"), data.get("revision"), data.get("fixture"))


def load_manifest(path: Path | str) -> list[ManifestEntry]:
    data = canonical.read(Path(path))
    entries = data.get("entries", data.get("repos")) if isinstance(data, dict) else data
    if not isinstance(entries, list):
        raise ValueError("manifest must be a list of entries or an object with an 'entries' list")
    base = Path(path).parent
    out = []
    for raw in entries:
        entry = ManifestEntry.from_dict(raw)
        if not is_url(entry.source) and not Path(entry.source).is_absolute():
            entry.source = str(base / entry.source)
        if entry.fixture and not Path(entry.fixture).is_absolute():
            entry.fixture = str(base / entry.fixture)
        out.append(entry)
    return out


def _record(entry: ManifestEntry, config: RunConfig, engine_factory, driver: str | None = None) -> EvalRecord:
    repo_id = entry.id or repo_id_for(entry.source)
    cfg = config.merged(fixture=entry.fixture, driver=driver)
    try:
        out = configure(entry.source, cfg, repo_id=repo_id, revision=entry.revision,
                        engine=engine_factory() if engine_factory else None)
    except (EnvForgeError, OSError, ValueError) as exc:
        log.warning("entry %s failed: %s", repo_id, exc)
        return EvalRecord(repo_id, "unknown", "", outcome="failed")
    score = out.score
    if score is None:  # the pipeline stopped before there was anything to score
        return EvalRecord(repo_id, out.language or "unknown", "", latency=out.latency, tokens=out.tokens,
                          outcome="failed", flags=[f"{out.outcome}: {out.failure}"])
    essr = score.essr
    if out.outcome != "success":
        essr = 0.0
    return EvalRecord(repo_id, out.language, score.scenario,
                      essr=essr if score.build_success is None else None,
                      build_success=score.build_success, latency=out.latency, tokens=out.tokens,
                      outcome=out.outcome, categories=dict(score.outcome.categories) if score.outcome else {},
                      undefined_essr=score.undefined, flags=list(score.flags))


def evaluate_batch(entries: list[ManifestEntry], config: RunConfig, engine_factory=None,
                   driver: str | None = None) -> dict:
    """Configure and score every entry with up to ``config.parallelism`` workers.

    Each worker gets its own engine, sandbox and budget; aggregation happens after
    all workers finish and is independent of completion order. ``driver`` overrides
    the configured driver per entry, for manifests whose entries carry their own fixtures.
    """
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        records = list(pool.map(lambda e: _record(e, config, engine_factory, driver), entries))
    records.sort(key=lambda r: r.repo_id)
    report = {"records": [r.to_dict() for r in records], "summary": aggregate_report(records)}
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    canonical.write(out / "report.json", report)
    (out / "report.txt").write_text(render_table(report["summary"]) + "\n", encoding="utf-8")
    return report
