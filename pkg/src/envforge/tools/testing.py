"""Test discovery and execution tools: construct_test, run_test, run_pytest and collection."""

from __future__ import annotations

import json
import posixpath
import re
import shlex
from dataclasses import asdict, dataclass, field

from ..errors import NothingToRun, RunnerAbsent
from ..evaluation import TestOutcome, TestResult, error_class_of, outcome_from_results, parse_junit
from ..repo import Repository, detect_artifacts, read_text

LIVENESS_WINDOW = 30.0
TEST_TIMEOUT = 600.0
FALLBACK_CHECKS = ("version-check", "structure-check", "import-check")
JUNIT_PATH = "/tmp/envforge-junit.xml"
PYTEST = "python -m pytest"
_FENCE = re.compile(r"^```([\w+-]*)[^\n]*\n(.*?)^```", re.M | re.S)
_SHELL_LANGS = {"", "bash", "sh", "shell", "console", "zsh", "shell-session", "cmd", "powershell"}
_INSTALLISH = re.compile(r"\b(install|uninstall|add|clone|download|config)\b")
_ERRORISH = re.compile(r"Traceback|\b\w*(Error|Exception)\b|\bpanic\b|\bFATAL\b|\bfatal\b")


@dataclass
class TestPlan:
    __test__ = False  # not a pytest test class

    entry_point: str | None = None
    run_commands: list[str] = field(default_factory=list)
    test_locations: list[str] = field(default_factory=list)
    fallback_checks: list[str] = field(default_factory=list)
    check_commands: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.entry_point or self.run_commands or self.test_locations or self.fallback_checks):
            raise ValueError("a test plan needs an entry point, run commands, tests or fallback checks")
        bad = set(self.fallback_checks) - set(FALLBACK_CHECKS)
        if bad:
            raise ValueError(f"unknown fallback checks {sorted(bad)}")

    def to_dict(self) -> dict:
        return asdict(self)

    def render(self) -> str:
        lines = [f"entry point: {self.entry_point or 'none'}"]
        lines.append("run commands:" + ("" if self.run_commands else " none"))
        lines += [f"  {c}" for c in self.run_commands]
        lines.append("test locations:" + ("" if self.test_locations else " none"))
        lines += [f"  {p}" for p in self.test_locations]
        if self.fallback_checks:
            lines.append("fallback checks:")
            for check in self.fallback_checks:
                for cmd in self.check_commands.get(check, []):
                    lines.append(f"  [{check}] {cmd}")
        return "\n".join(lines)


def readme_run_commands(repo: Repository, prefixes: tuple[str, ...]) -> list[str]:
    """Commands in README fenced shell blocks that start with one of ``prefixes``."""
    out: list[str] = []
    readmes = [a.path for a in detect_artifacts(repo) if a.kind == "readme"]
    for path in readmes:
        try:
            text = read_text(repo, path)
        except Exception:
            continue
        for lang, body in _FENCE.findall(text):
            if lang.lower() not in _SHELL_LANGS:
                continue
            for line in body.splitlines():
                line = line.strip()
                line = re.sub(r"^(\$|>|#|PS>)\s+", "", line)
                if not line or line.startswith("#"):
                    continue
                first = line.split()[0]
                if first in prefixes and not _INSTALLISH.search(line) and line not in out:
                    out.append(line)
    return out


def package_modules(repo: Repository) -> list[str]:
    """Top-level importable packages (directories with an ``__init__`` file at the root or under src/)."""
    mods = set()
    for f in repo.files:
        parts = f.path.split("/")
        base = parts[-1]
        if not base.startswith("__init__."):
            continue
        if len(parts) == 2:
            mods.add(parts[0])
        elif len(parts) == 3 and parts[0] == "src":
            mods.add(parts[1])
    return sorted(m for m in mods if m.isidentifier() and m not in ("tests", "test", "docs", "examples"))


def _manifest_entry(repo: Repository) -> str | None:
    if repo.entry("package.json"):
        try:
            data = json.loads(read_text(repo, "package.json"))
        except (ValueError, OSError):
            return None
        main = data.get("main")
        if isinstance(main, str) and repo.entry(posixpath.normpath(main)):
            return posixpath.normpath(main)
    return None


def construct_test(repo: Repository, plugin, workdir: str = "/repo") -> TestPlan:
    artifacts = detect_artifacts(repo)
    tests = sorted({a.path for a in artifacts if a.kind == "test-script"
                    and a.language in (None, plugin.language)})
    entry = next((c for c in plugin.entry_candidates if repo.entry(c)), None) or _manifest_entry(repo)
    runs = readme_run_commands(repo, plugin.run_prefixes)
    plan = dict(entry_point=entry, run_commands=runs, test_locations=tests)
    if not (entry or runs or tests):
        checks: dict[str, list[str]] = {}
        checks["version-check"] = [plugin.version_probe] if plugin.version_probe else []
        manifests = [a.path for a in artifacts if a.kind == "build-manifest"]
        target = manifests[0] if manifests else ""
        checks["structure-check"] = [f"test -e {shlex.quote(posixpath.join(workdir, target))}"] if target \
            else [f"test -d {workdir}"]
        mods = package_modules(repo) if plugin.import_template else []
        checks["import-check"] = [plugin.import_template.format(module=m) for m in mods]
        return TestPlan(**plan, fallback_checks=list(FALLBACK_CHECKS), check_commands=checks)
    return TestPlan(**plan)


# -- execution ------------------------------------------------------------------

@dataclass
class RunVerdict:
    command: str
    success: bool
    reason: str
    exit_code: int | None


def judge_run(command: str, obs) -> RunVerdict:
    """Clean exit, or still alive at the liveness window with a quiet stderr, counts as success."""
    if obs.exit_code == 0:
        return RunVerdict(command, True, "exited cleanly", 0)
    if obs.timed_out:
        if _ERRORISH.search(obs.stderr) or _ERRORISH.search(obs.stdout[-4000:]):
            return RunVerdict(command, False, "still running but reported errors", None)
        return RunVerdict(command, True, "still running at the liveness window with no errors", None)
    return RunVerdict(command, False, f"exit code {obs.exit_code}", obs.exit_code)


def _run_commands(sandbox, commands: list[str], window: float) -> tuple[list[RunVerdict], list]:
    verdicts, observations = [], []
    for cmd in commands:
        obs = sandbox.exec(cmd, window)
        verdicts.append(judge_run(cmd, obs))
        observations.append(obs)
    return verdicts, observations


def run_commands_outcome(verdicts: list[RunVerdict]) -> TestOutcome:
    results = [TestResult(v.command, "passed" if v.success else "failed",
                          None if v.success else "RunFailure", v.reason) for v in verdicts]
    return outcome_from_results(results)


def pytest_available(sandbox) -> bool:
    return sandbox.exec(f"{PYTEST} --version", 60).exit_code == 0


def run_pytest(sandbox, paths: list[str] | None = None, report_path: str = "/tmp/envforge-test-report.json",
               timeout: float = TEST_TIMEOUT) -> tuple[TestOutcome, str]:
    """Run the suite, parse the JUnit report, write a JSON summary into the sandbox."""
    if not pytest_available(sandbox):
        raise RunnerAbsent("pytest is not installed in the sandbox; install it first")
    targets = " ".join(shlex.quote(p) for p in (paths or []))
    sandbox.exec(f"rm -f {JUNIT_PATH}", 30)
    cmd = f"{PYTEST} -q -p no:cacheprovider --junitxml={JUNIT_PATH} {targets}".strip()
    obs = sandbox.exec(cmd, timeout)
    try:
        xml = sandbox.read_file(JUNIT_PATH).decode("utf-8", errors="replace")
        outcome = parse_junit(xml, report_ref=report_path)
    except (FileNotFoundError, OSError, ValueError):
        outcome = TestOutcome(report_ref=report_path)
        if obs.exit_code not in (0, 5):
            err = error_class_of(obs.stdout + "\n" + obs.stderr)
            outcome = outcome_from_results([TestResult("<session>", "error", err, "pytest did not produce a report")],
                                           report_path)
    report = {"command": cmd, "exit_code": obs.exit_code, "timed_out": obs.timed_out, **outcome.to_dict()}
    sandbox.write_file(report_path, (json.dumps(report, indent=2, sort_keys=True) + "\n").encode())
    return outcome, summarize_outcome(outcome, obs, report_path)


def summarize_outcome(outcome: TestOutcome, obs, report_path: str) -> str:
    lines = [f"tests: {outcome.total} run, {outcome.passed} passed, {outcome.failed} failed, "
             f"{outcome.errored} errors, {outcome.skipped} skipped"]
    if obs.timed_out:
        lines.append("the test run hit its timeout")
    if outcome.categories:
        lines.append("failure categories: " + ", ".join(f"{k}={v}" for k, v in outcome.categories.items()))
    bad = [r for r in outcome.results if r.outcome in ("failed", "error")]
    for r in bad[:20]:
        msg = r.message.splitlines()[0][:200] if r.message else ""
        lines.append(f"{r.outcome.upper()} {r.nodeid} [{r.error_class or 'unknown'}] {msg}".rstrip())
    if len(bad) > 20:
        lines.append(f"... {len(bad) - 20} more")
    if outcome.total == 0 and obs.exit_code not in (0, 5):
        tail = (obs.stdout + obs.stderr).strip().splitlines()[-15:]
        lines += ["pytest output (tail):"] + tail
    lines.append(f"structured report: {report_path}")
    return "\n".join(lines)


@dataclass
class CollectionReport:
    count: int
    tests: list[str]
    errors: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)


_COLLECT_ERR = re.compile(r"^_+ ERROR collecting (\S+) _+$", re.M)


def parse_collection(output: str) -> CollectionReport:
    tests = [line.strip() for line in output.splitlines() if "::" in line and not line.startswith(("E ", "ERROR"))]
    errors = []
    sections = _COLLECT_ERR.split(output)
    # split yields [pre, path1, body1, path2, body2, ...]
    for path, body in zip(sections[1::2], sections[2::2]):
        err_lines = [ln[1:].strip() for ln in body.splitlines() if ln.startswith("E ")]
        message = next((ln for ln in reversed(err_lines) if re.match(r"[\w.]+(Error|Exception)\b", ln)),
                       err_lines[-1] if err_lines else "")
        errors.append({"path": path, "error_class": error_class_of(message), "message": message})
    return CollectionReport(len(tests), tests, errors)


def run_pytest_collect(sandbox, timeout: float = TEST_TIMEOUT) -> tuple[CollectionReport, str]:
    if not pytest_available(sandbox):
        raise RunnerAbsent("pytest is not installed in the sandbox; install it first")
    obs = sandbox.exec(f"{PYTEST} --collect-only -q -p no:cacheprovider", timeout)
    report = parse_collection(obs.stdout + "\n" + obs.stderr)
    lines = [f"collected {report.count} tests, {len(report.errors)} collection errors"]
    for err in report.errors:
        lines.append(f"ERROR {err['path']}: {err['message']}")
    return report, "\n".join(lines)


def run_test(sandbox, plan: TestPlan, plugin, kind: str = "test", window: float = LIVENESS_WINDOW,
             report_path: str = "/tmp/envforge-test-report.json", repo: Repository | None = None):
    """Execute part of a test plan. Returns ``(TestOutcome, text)``."""
    if kind == "test":
        if not plan.test_locations:
            raise NothingToRun("the test plan lists no test locations")
        if plugin.test_runner == "run-pytest":
            return run_pytest(sandbox, None, report_path)
        commands = list(plugin.resolve_verify_commands(repo) if repo else plugin.verify_commands)
        verdicts = []
        for cmd in commands:
            obs = sandbox.exec(cmd, TEST_TIMEOUT)
            verdicts.append(RunVerdict(cmd, obs.exit_code == 0, "exit code 0" if obs.exit_code == 0
                                       else ("timed out" if obs.timed_out else f"exit code {obs.exit_code}"),
                                       obs.exit_code))
        outcome = run_commands_outcome(verdicts)
        return outcome, _render_verdicts(verdicts)
    if kind == "collect":
        if plugin.test_runner != "run-pytest":
            raise NothingToRun(f"no collection runner for {plugin.language}")
        report, text = run_pytest_collect(sandbox)
        results = [TestResult(t, "passed") for t in report.tests]
        results += [TestResult(e["path"], "error", e["error_class"], e["message"]) for e in report.errors]
        return outcome_from_results(results), text
    if kind == "run":
        commands = list(plan.run_commands)
        if not commands and plan.entry_point and plugin.entry_template:
            commands = [plugin.entry_template.format(entry=plan.entry_point)]
        if not commands:
            commands = [c for check in plan.fallback_checks for c in plan.check_commands.get(check, [])]
        if not commands:
            raise NothingToRun("the test plan has nothing to run")
        verdicts, _ = _run_commands(sandbox, commands, window)
        return run_commands_outcome(verdicts), _render_verdicts(verdicts)
    raise ValueError(f"unknown kind {kind!r}")


def _render_verdicts(verdicts: list[RunVerdict]) -> str:
    ok = sum(v.success for v in verdicts)
    lines = [f"{ok}/{len(verdicts)} commands succeeded"]
    lines += [f"{'PASS' if v.success else 'FAIL'} {v.command} ({v.reason})" for v in verdicts]
    return "\n".join(lines)
