"""The tool inventory: descriptors plus the handlers that back them."""

from __future__ import annotations

import json
from dataclasses import replace

from .. import images
from ..errors import NothingToRun, SchemaError, VersionSwitchUnsupported
from ..repo import FileEntry, Repository, code_outline, directory_tree, read_text, search_code
from ..sandbox import change_runtime_version
from . import testing
from .base import Param, ToolContext, ToolDescriptor, ToolRegistry, ToolResult
from .cicd import extract_ci
from .editing import edit_file
from .retrieval import load_issue_db, retrieve_issue, search_web

READ_CAP = 32 * 1024
SUMMARY_PROMPT = """Summarize what matters in the following {what} for setting up this project's development environment: required runtimes and versions, dependencies, system packages, build and test commands, and anything unusual.

{body}

Answer in at most 12 short bullet points."""


def _subrepo(repo: Repository, rel: str) -> Repository:
    if not rel:
        return repo
    prefix = rel.rstrip("/") + "/"
    files = tuple(FileEntry(f.path[len(prefix):], f.size, f.language, f.is_code)
                  for f in repo.files if f.path.startswith(prefix))
    if not files:
        raise SchemaError(f"{rel} is not a directory in the repository")
    return Repository(repo.root / rel, rel.rsplit("/", 1)[-1], files, repo.revision, repo.scanned_at)


def _summarize(ctx: ToolContext, what: str, body: str) -> tuple[str, list[str]]:
    if ctx.llm is None:
        return "", ["analysis skipped: no completion handle"]
    try:
        reply = ctx.llm.complete([{"role": "user", "content": SUMMARY_PROMPT.format(what=what, body=body[:24000])}],
                                 ctx.ledger).reply
    except Exception as exc:
        return "", [f"analysis failed: {exc}"]
    return "\n--- analysis ---\n" + reply.strip(), []


# -- repository analysis ----------------------------------------------------------

def ls_structure(ctx: ToolContext, repo: str, depth: int, highlight: bool) -> ToolResult:
    if depth < 1:
        raise SchemaError("--depth must be at least 1")
    view = _subrepo(ctx.refresh(), ctx.rel(repo))
    return ToolResult(directory_tree(view, depth, highlight))


def read_file(ctx: ToolContext, path: str, start: int | None, end: int | None, analyze: bool) -> ToolResult:
    rel = ctx.rel(path)
    repo = ctx.refresh()
    if repo.entry(rel) is None:
        raise SchemaError(f"{path} is not a file in the repository")
    text = read_text(repo, rel)
    lines = text.splitlines()
    lo, hi = start or 1, end or len(lines)
    if lines and (lo < 1 or hi < lo or hi > len(lines)):
        raise SchemaError(f"lines {lo}-{hi} outside 1-{len(lines)}")
    body = "\n".join(lines[lo - 1:hi])
    head = f"# {rel} (lines {lo}-{hi} of {len(lines)})" if (start or end) else f"# {rel} ({len(lines)} lines)"
    out, warnings = head + "\n" + body, []
    if analyze:
        extra, warnings = _summarize(ctx, f"file {rel}", body)
        out += extra
    return ToolResult(out, warnings=warnings)


def view_outline(ctx: ToolContext, path: str, recursive: bool, line_numbers: bool) -> ToolResult:
    text = code_outline(ctx.refresh(), ctx.rel(path), recursive, line_numbers)
    return ToolResult(text or "no outline entries found")


def search_repo(ctx: ToolContext, query: str, mode: str) -> ToolResult:
    hits = search_code(ctx.refresh(), query, "detailed" if mode == "detailed" else "simple")
    lines = [f"{len(hits)} matches for {query!r}"]
    for h in hits[:100]:
        lines.append(f"{h.path}:{h.line}: {h.excerpt}")
        if mode == "detailed" and h.context:
            lines += [f"    {c}" for c in h.context]
    if len(hits) > 100:
        lines.append(f"... {len(hits) - 100} more")
    out, warnings = "\n".join(lines), []
    if mode == "llm" and hits:
        extra, warnings = _summarize(ctx, f"search results for {query!r}", out)
        out += extra
    return ToolResult(out, data={"hits": len(hits)}, warnings=warnings)


def construct_test(ctx: ToolContext, repo: str) -> ToolResult:
    view = _subrepo(ctx.refresh(), ctx.rel(repo))
    plan = testing.construct_test(view, ctx.plugin, ctx.workdir)
    ctx.test_plan = plan
    return ToolResult(plan.render(), data=plan.to_dict())


# -- knowledge retrieval ------------------------------------------------------------

def search_web_tool(ctx: ToolContext, query: str) -> ToolResult:
    results, warnings = search_web(query, ctx.web_client)
    if not results:
        return ToolResult("no results" + (f" ({warnings[0]})" if warnings else ""), warnings=warnings)
    lines = []
    for i, r in enumerate(results, 1):
        lines.append(f"{i}. {r.title}\n   {r.url}\n   {r.excerpt[:400]}")
    return ToolResult("\n".join(lines), data={"results": len(results)}, warnings=warnings)


def retrieve_image(ctx: ToolContext, repo: str) -> ToolResult:
    if not any(a.kind == "build-manifest" for a in ctx.artifacts()):
        raise SchemaError("retrieve-image needs a build manifest in the repository")
    spec = images.analyze_requirements(ctx.repo, ctx.artifacts(), ctx.llm, ctx.ledger, ctx.allowed,
                                       ctx.plugin.language if ctx.plugin else None)
    warnings: list[str] = []
    found = images.search_registry(replace(spec, search_hub=True), ctx.llm, ctx.ledger, ctx.registry_client,
                                   on_warning=warnings.append)
    if not found:
        return ToolResult("no registry images found" + (f" ({warnings[0]})" if warnings else ""),
                          warnings=warnings or ["registry search returned nothing"])
    ranked, scored = images.score_candidates(spec, found, ctx.llm, ctx.ledger)
    if not scored:
        warnings.append("scores unavailable; listing unranked")
    lines = [f"requirements: {spec.language} {spec.version} ({spec.full_image})"]
    for c in ranked[:5]:
        score = "-" if c.score is None else f"{c.score:.2f}"
        lines.append(f"{c.reference} score={score} {c.description}".rstrip())
        lines.append(f"  docker pull {c.reference}")
    return ToolResult("\n".join(lines), data={"images": [c.reference for c in ranked[:5]]}, warnings=warnings)


def retrieve_issue_tool(ctx: ToolContext, query: str) -> ToolResult:
    entries = load_issue_db(ctx.issue_db)
    hits, warnings = retrieve_issue(query, entries, ctx.llm, ctx.ledger)
    if not hits:
        return ToolResult("no matching issues", warnings=warnings)
    lines = []
    for i, h in enumerate(hits, 1):
        lines.append(f"{i}. [{h.entry.error_class or 'unknown'}] {h.entry.error_text[:200]} (from {h.entry.repo or h.entry.id})")
        lines += [f"   fix: {c}" for c in h.entry.fix_commands]
    return ToolResult("\n".join(lines), data={"hits": [h.to_dict() for h in hits]}, warnings=warnings)


# -- environment setup ------------------------------------------------------------------

def edit_file_tool(ctx: ToolContext, path: str, mode: str, start, end, line, content, pattern, replacement,
                   regex: bool, count: int, instruction) -> ToolResult:
    target = ctx.host_path(path)
    report = edit_file(target, ctx.rel(path), mode, start=start, end=end, line=line, content=content,
                       pattern=pattern, replacement=replacement, regex=regex, count=count,
                       instruction=instruction, llm=ctx.llm, ledger=ctx.ledger)
    return ToolResult(report.render(), data={"backup": report.backup, "created": report.created})


_ENV_PROBE = r"""
if [ -r /etc/os-release ]; then . /etc/os-release; echo "os=${ID:-unknown} ${VERSION_ID:-}"; else echo "os=unknown"; fi
echo "arch=$(uname -m 2>/dev/null || echo unknown)"
if command -v nvidia-smi >/dev/null 2>&1 && nvidia-smi -L >/dev/null 2>&1; then echo "gpu=true"; else echo "gpu=false"; fi
"""


def _probe_network(ctx: ToolContext, url: str) -> bool | None:
    cmd = (f"if command -v curl >/dev/null 2>&1; then curl -sS -m 5 -o /dev/null {url} && echo reach=true || echo reach=false; "
           f"elif command -v wget >/dev/null 2>&1; then wget -q -T 5 --spider {url} && echo reach=true || echo reach=false; "
           "else echo reach=unknown; fi")
    obs = ctx.sandbox.exec(cmd, 20)
    value = obs.stdout.strip().rsplit("reach=", 1)[-1] if "reach=" in obs.stdout else "unknown"
    return {"true": True, "false": False}.get(value)


def detect_environment(ctx: ToolContext, format: str) -> ToolResult:
    report: dict = {"os": "unknown", "arch": "unknown", "gpu": None, "runtimes": {}, "network": None,
                    "mirrors": dict(sorted(ctx.mirrors.items()))}
    obs = ctx.sandbox.exec(_ENV_PROBE, 30)
    for line in obs.stdout.splitlines():
        key, _, value = line.partition("=")
        if key == "gpu":
            report["gpu"] = value == "true"
        elif key in ("os", "arch"):
            report[key] = value.strip() or "unknown"
    for plugin in (ctx.plugins or []):
        if not plugin.version_probe:
            continue
        res = ctx.sandbox.exec(f"{plugin.version_probe} 2>&1 | head -n 1", 20)
        first = res.stdout.strip().splitlines()[0] if res.stdout.strip() else ""
        present = res.exit_code == 0 and first and "not found" not in first
        report["runtimes"][plugin.language] = first if present else None
    probe_url = next(iter(report["mirrors"].values()), "https://github.com")
    report["network"] = _probe_network(ctx, probe_url)
    if format == "json":
        return ToolResult(json.dumps(report, indent=2, sort_keys=True), data=report)
    lines = [f"os: {report['os']}", f"arch: {report['arch']}",
             f"gpu: {'unknown' if report['gpu'] is None else ('yes' if report['gpu'] else 'no')}",
             f"network: {'unknown' if report['network'] is None else ('reachable' if report['network'] else 'unreachable')}"]
    lines.append("runtimes:")
    lines += [f"  {k}: {v or 'absent'}" for k, v in report["runtimes"].items()]
    lines.append("mirrors: " + (", ".join(f"{k}={v}" for k, v in report["mirrors"].items()) or "none"))
    return ToolResult("\n".join(lines), data=report)


def cicd_config(ctx: ToolContext, repo: str, format: str) -> ToolResult:
    found = extract_ci(ctx.refresh())
    if format == "json":
        return ToolResult(json.dumps(found.to_dict(), indent=2, sort_keys=True), data=found.to_dict(),
                          warnings=found.warnings)
    lines = [f"workflows: {', '.join(found.workflows)}"]
    if found.pins:
        lines.append("version pins: " + ", ".join(f"{k}={v}" for k, v in found.pins.items()))
    if found.services:
        lines.append("services: " + ", ".join(found.services))
    lines.append("setup script:")
    lines.append(found.script().rstrip())
    for w in found.warnings:
        lines.append(f"warning: {w}")
    return ToolResult("\n".join(lines), data=found.to_dict(), warnings=found.warnings)


def _switch(ctx: ToolContext, language: str, version: str) -> ToolResult:
    if ctx.plugin is None or ctx.plugin.language != language:
        current = ctx.plugin.language if ctx.plugin else "unknown"
        raise VersionSwitchUnsupported(f"cannot switch {language} version in a {current} sandbox")
    change_runtime_version(ctx.sandbox, ctx.plugin, version)
    return ToolResult(f"switched to {ctx.sandbox.image} ({ctx.plugin.runtime.reference(version)}); "
                      f"/repo is preserved, previously installed packages are not",
                      data={"image": ctx.sandbox.image})


def change_python_version(ctx: ToolContext, version: str) -> ToolResult:
    return _switch(ctx, "python", version)


def change_java_version(ctx: ToolContext, version: str) -> ToolResult:
    return _switch(ctx, "java", version)


def stop(ctx: ToolContext) -> ToolResult:
    return ToolResult("stopping the setup session", stop=True)


# -- validation ------------------------------------------------------------------------------

def run_test(ctx: ToolContext, kind: str, window: float) -> ToolResult:
    plan = ctx.test_plan or testing.construct_test(ctx.refresh(), ctx.plugin, ctx.workdir)
    ctx.test_plan = plan
    outcome, text = testing.run_test(ctx.sandbox, plan, ctx.plugin, kind, window, ctx.report_path, ctx.repo)
    verdict = None if kind == "collect" else outcome.success
    return ToolResult(text, data=outcome.to_dict(), verification=verdict)


def run_pytest(ctx: ToolContext, path: str | None) -> ToolResult:
    outcome, text = testing.run_pytest(ctx.sandbox, [path] if path else None, ctx.report_path)
    return ToolResult(text, data=outcome.to_dict(), verification=outcome.success)


def run_pytest_collect(ctx: ToolContext) -> ToolResult:
    report, text = testing.run_pytest_collect(ctx.sandbox)
    return ToolResult(text, data=report.to_dict())


def _d(name, summary, handler, params=None, positional=(), requires=(), cap=None) -> ToolDescriptor:
    extra = {"output_cap": cap} if cap else {}
    return ToolDescriptor(name, summary, params or {}, handler, tuple(positional), requires=frozenset(requires),
                          **extra)


TOOLS = (
    _d("ls-structure", "show the directory tree, marking key files", ls_structure,
       {"repo": Param(default="/repo"), "depth": Param("int", default=3), "highlight": Param("bool", default=True)},
       positional=("repo",)),
    _d("read-file", "print a file (optionally a line range) with an optional model analysis", read_file,
       {"path": Param(required=True), "start": Param("int"), "end": Param("int"), "analyze": Param("bool", default=False)},
       positional=("path",), cap=READ_CAP),
    _d("view-outline", "list classes and function signatures in a file or directory", view_outline,
       {"path": Param(default="/repo"), "recursive": Param("bool", default=False),
        "line-numbers": Param("bool", default=False)}, positional=("path",)),
    _d("search-repo", "search the code for a literal string", search_repo,
       {"query": Param(required=True), "mode": Param("choice", default="simple", choices=("detailed", "simple", "llm"))},
       positional=("query",)),
    _d("search-web", "search Q&A sites for an error message or how-to", search_web_tool,
       {"query": Param(required=True)}, positional=("query",), requires=("web",)),
    _d("retrieve-image", "find and rank registry images that fit the project, with pull commands", retrieve_image,
       {"repo": Param(default="/repo")}, positional=("repo",), requires=("llm", "registry")),
    _d("retrieve-issue", "look up fixes for an error message in the issue database", retrieve_issue_tool,
       {"query": Param(required=True)}, positional=("query",), requires=("issue-db",)),
    _d("edit-file", "edit a file (replace-range, insert, search-replace, llm-guided); keeps a .bak", edit_file_tool,
       {"path": Param(required=True),
        "mode": Param("choice", required=True, choices=("replace-range", "insert", "search-replace", "llm-guided")),
        "start": Param("int"), "end": Param("int"), "line": Param("int"), "content": Param(),
        "pattern": Param(), "replacement": Param(), "regex": Param("bool", default=True),
        "count": Param("int", default=0), "instruction": Param()},
       positional=("path",)),
    _d("detect-environment", "report OS, runtimes, GPU, network reachability and mirrors", detect_environment,
       {"format": Param("choice", default="text", choices=("text", "json"))}, requires=("sandbox",)),
    _d("cicd-config", "turn CI workflows into a local setup script", cicd_config,
       {"repo": Param(default="/repo"), "format": Param("choice", default="text", choices=("text", "json"))},
       positional=("repo",)),
    _d("construct-test", "find entry points, README run commands and test files", construct_test,
       {"repo": Param(default="/repo")}, positional=("repo",)),
    _d("run-test", "run the constructed test plan (test, run or collect)", run_test,
       {"kind": Param("choice", default="test", choices=("test", "run", "collect")),
        "window": Param("float", default=testing.LIVENESS_WINDOW)}, positional=("kind",), requires=("sandbox",)),
    _d("run-pytest", "run the pytest suite and write a structured JSON report", run_pytest,
       {"path": Param()}, positional=("path",), requires=("sandbox",)),
    _d("run-pytest-collect", "collect pytest tests without running them to expose import errors",
       run_pytest_collect, requires=("sandbox",)),
    _d("change-python-version", "switch the sandbox's Python runtime (installed packages are lost)",
       change_python_version, {"version": Param(required=True)}, positional=("version",), requires=("sandbox",)),
    _d("change-java-version", "switch the sandbox's Java runtime, e.g. 11, 17, 21 (installed packages are lost)",
       change_java_version, {"version": Param(required=True)}, positional=("version",), requires=("sandbox",)),
    _d("stop", "end the setup session", stop),
)


def default_toolset() -> ToolRegistry:
    return ToolRegistry(TOOLS)


__all__ = ["TOOLS", "default_toolset", "NothingToRun"]
