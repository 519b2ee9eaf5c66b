"""Scoring configured environments: scenario tags, executable-success ratios,
build verdicts, failure categories, corpus tiers and stratified sampling."""

from __future__ import annotations

import datetime as dt
import json
import random
import re
import statistics
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path

from filelock import FileLock

from . import canonical
from .errors import EmptyReport, UndefinedESSR
from .languages import TEST_DIRS
from .repo import ConfigArtifact, Repository

ERROR_CLASSES = ("ImportError", "ModuleNotFoundError", "ConnectionError", "RuntimeError", "AssertionError", "other")
CONNECTION_CLASSES = {
    "ConnectionError", "ConnectionRefusedError", "ConnectionResetError", "ConnectionAbortedError",
    "NewConnectionError", "MaxRetryError", "ConnectError", "ConnectTimeout", "ConnectTimeoutError", "gaierror",
    "NameResolutionError", "ProxyError", "SSLError", "RemoteDisconnected", "ClientConnectorError",
}
_EXC_NAME = re.compile(r"^(?:[A-Za-z_][\w]*\.)*([A-Za-z_]\w*(?:Error|Exception|Exit|Interrupt|Failure|Warning|gaierror))\b")
_E_LINE = re.compile(r"^E\s+((?:[A-Za-z_]\w*\.)*[A-Za-z_]\w*(?:Error|Exception|Exit|Interrupt|Failure|gaierror))\b",
                     re.M)

SIZE_TIERS = ("small", "medium", "large")
STAR_TIERS = ("(10,100]", "(100,1000]", "(1000,inf)")
INELIGIBLE = "ineligible"
ACTIVITY_DAYS = 365
MIN_STARS = 10


class ScenarioTag(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"


# -- test outcomes -----------------------------------------------------------

@dataclass
class TestResult:
    __test__ = False  # not a pytest test class

    nodeid: str
    outcome: str  # passed | failed | error | skipped
    error_class: str | None = None
    message: str = ""


@dataclass
class TestOutcome:
    __test__ = False  # not a pytest test class

    total: int = 0
    passed: int = 0
    failed: int = 0
    errored: int = 0
    skipped: int = 0
    verified: int | None = None
    categories: dict[str, int] = field(default_factory=dict)
    results: list[TestResult] = field(default_factory=list)
    report_ref: str | None = None

    def __post_init__(self):
        counts = (self.total, self.passed, self.failed, self.errored, self.skipped)
        if any(c < 0 for c in counts):
            raise ValueError("test counts must be non-negative")
        if self.passed > self.total:
            raise ValueError("passed exceeds total")
        if self.verified is not None and not self.passed <= self.verified <= self.total:
            raise ValueError("need passed <= verified <= total")

    @property
    def success(self) -> bool:
        return self.total > 0 and self.failed == 0 and self.errored == 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TestOutcome":
        data = dict(data)
        data["results"] = [TestResult(**r) for r in data.get("results", [])]
        return cls(**data)


def error_class_of(text: str | None) -> str | None:
    """Exception class name named by a failure message or traceback, if any."""
    if not text:
        return None
    m = _E_LINE.findall(text)
    if m:
        return m[-1].rsplit(".", 1)[-1]
    first = text.strip().splitlines()[0] if text.strip() else ""
    m2 = _EXC_NAME.match(first)
    return m2.group(1) if m2 else None


def category_for(error_class: str | None) -> str:
    """Fold an exception class into the reporting categories."""
    if not error_class:
        return "other"
    name = error_class.rsplit(".", 1)[-1]
    if name in ("ImportError", "ModuleNotFoundError", "AssertionError"):
        return name
    if name in CONNECTION_CLASSES:
        return "ConnectionError"
    if _EXC_NAME.match(name):
        return "RuntimeError"  # residual class for crashes during execution
    return "other"


def parse_junit(text: str, report_ref: str | None = None) -> TestOutcome:
    root = ET.fromstring(text)
    results: list[TestResult] = []
    for case in root.iter("testcase"):
        cls, name = case.get("classname", ""), case.get("name", "")
        nodeid = f"{cls}::{name}" if cls else name
        outcome, message, detail = "passed", "", ""
        for tag, label in (("failure", "failed"), ("error", "error"), ("skipped", "skipped")):
            node = case.find(tag)
            if node is not None:
                outcome, message, detail = label, node.get("message", ""), (node.text or "")
                if node.get("type") and label != "skipped":
                    detail = f"{node.get('type')}: {message}\n{detail}"
                break
        err = None
        if outcome in ("failed", "error"):
            err = error_class_of(detail) or error_class_of(message)
        results.append(TestResult(nodeid, outcome, err, message[:500]))
    return outcome_from_results(results, report_ref)


def outcome_from_results(results: list[TestResult], report_ref: str | None = None) -> TestOutcome:
    tally = {"passed": 0, "failed": 0, "error": 0, "skipped": 0}
    categories: dict[str, int] = {}
    for r in results:
        tally[r.outcome] += 1
        if r.outcome in ("failed", "error"):
            cat = category_for(r.error_class)
            categories[cat] = categories.get(cat, 0) + 1
    total = tally["passed"] + tally["failed"] + tally["error"]
    return TestOutcome(total, tally["passed"], tally["failed"], tally["error"], tally["skipped"],
                       categories=dict(sorted(categories.items())), results=results, report_ref=report_ref)


def categorize_failures(report) -> dict[str, int]:
    """Histogram of failure categories from a structured report.

    Accepts a :class:`TestOutcome`, a JSON report (dict or text) with a
    ``results`` list, or JUnit XML. Anything else counts as ``other``: one
    per FAILED/ERROR summary line, or one in total.
    """
    if isinstance(report, TestOutcome):
        return outcome_from_results(report.results).categories
    data = report
    if isinstance(report, (str, bytes)):
        text = report.decode(errors="replace") if isinstance(report, bytes) else report
        stripped = text.lstrip()
        try:
            if stripped.startswith("<"):
                return parse_junit(text).categories
            data = json.loads(text)
        except (ET.ParseError, ValueError):
            return _garbage(text)
    if isinstance(data, dict) and isinstance(data.get("results"), list):
        try:
            results = [TestResult(**r) for r in data["results"]]
            return outcome_from_results(results).categories
        except (TypeError, KeyError):
            pass
    return _garbage(json.dumps(data) if not isinstance(data, str) else data)


def _garbage(text: str) -> dict[str, int]:
    if not text.strip():
        return {}
    n = len(re.findall(r"^(?:FAILED|ERROR)\b", text, re.M))
    return {"other": max(n, 1)}


# -- scenarios and the success ratio -----------------------------------------

def classify_scenario(repo: Repository | None, artifacts: list[ConfigArtifact]) -> ScenarioTag:
    """S1: tests plus a container or CI artifact; S2: tests only; S3: no tests."""
    has_tests = any(a.kind == "test-script" for a in artifacts)
    if not has_tests:
        return ScenarioTag.S3
    if any(a.kind in ("dockerfile", "ci-pipeline") for a in artifacts):
        return ScenarioTag.S1
    return ScenarioTag.S2


def scenario_flags(artifacts: list[ConfigArtifact]) -> list[str]:
    """Flags for records whose scenario assignment is a judgement call."""
    has_tests = any(a.kind == "test-script" for a in artifacts)
    if not has_tests and any(a.kind in ("dockerfile", "ci-pipeline") for a in artifacts):
        return ["s3-with-containerization"]
    return []


def _verified(outcome: TestOutcome) -> int:
    return outcome.total if outcome.verified is None else outcome.verified


def essr_fraction(outcome: TestOutcome, scenario: ScenarioTag | str | None = None) -> Fraction:
    verified = _verified(outcome)
    if verified <= 0:
        raise UndefinedESSR("no verified tests", scenario=str(scenario) if scenario else None)
    return Fraction(outcome.passed, verified)


def compute_essr(outcome: TestOutcome, scenario: ScenarioTag | str | None = None) -> float:
    """passed / verified; verified defaults to total when no reference exclusion applied."""
    return float(essr_fraction(outcome, scenario))


def reference_defects(reference: TestOutcome) -> list[str]:
    """Tests that do not pass in a known-good environment: inherent defects."""
    return sorted(r.nodeid for r in reference.results if r.outcome in ("failed", "error"))


def restrict_to_verified(outcome: TestOutcome, defects) -> TestOutcome:
    """Drop inherent-defect tests from the denominator (and from the numerator)."""
    defects = set(defects)
    kept = [r for r in outcome.results if r.nodeid not in defects]
    dropped = [r for r in outcome.results if r.nodeid in defects and r.outcome != "skipped"]
    passed = sum(1 for r in kept if r.outcome == "passed")
    verified = outcome.total - len(dropped)
    return TestOutcome(outcome.total, passed, outcome.failed, outcome.errored, outcome.skipped, verified,
                       dict(outcome.categories), list(outcome.results), outcome.report_ref)


class DefectCache:
    """Per-repository inherent-defect test ids, one JSON file, lock-protected writes."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = FileLock(str(self.path) + ".lock")

    def get(self, repo_id: str) -> list[str] | None:
        if not self.path.exists():
            return None
        return canonical.read(self.path).get(repo_id)

    def put(self, repo_id: str, defects) -> None:
        with self._lock:
            data = canonical.read(self.path) if self.path.exists() else {}
            data[repo_id] = sorted(set(defects))
            canonical.write(self.path, data)


def build_success(sandbox, commands, timeout: float = 600.0) -> tuple[bool, str]:
    """Run build commands in order; success iff every one exits zero in time."""
    log_parts = []
    for command in commands:
        obs = sandbox.exec(command, timeout)
        log_parts.append(f"$ {command}\n{obs.render()}")
        if obs.exit_code != 0:
            return False, "\n".join(log_parts)
    return True, "\n".join(log_parts)


# -- corpus tiers --------------------------------------------------------------

def size_tier(code_bytes: int) -> str:
    """small below 500,000 bytes; medium is the closed range up to 5,000,000; large above."""
    if code_bytes < 0:
        raise ValueError("size must be non-negative")
    if code_bytes < 500_000:
        return "small"
    if code_bytes <= 5_000_000:
        return "medium"
    return "large"


def star_tier(stars: int) -> str:
    if stars < 0:
        raise ValueError("stars must be non-negative")
    if stars <= MIN_STARS:
        return INELIGIBLE
    if stars <= 100:
        return "(10,100]"
    if stars <= 1000:
        return "(100,1000]"
    return "(1000,inf)"


@dataclass
class RepoMeta:
    id: str
    stars: int
    last_activity: str  # ISO date or datetime
    language: str | None = None
    files: list[str] = field(default_factory=list)
    code_bytes: int = 0
    clone_url: str = ""

    @classmethod
    def from_dict(cls, data: dict) -> "RepoMeta":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass
class Eligibility:
    eligible: bool
    reasons: list[str]
    priority: bool = False


def _parse_when(text: str) -> dt.datetime:
    when = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    return when if when.tzinfo else when.replace(tzinfo=dt.timezone.utc)


def eligibility(meta: RepoMeta, plugins=None, now: dt.datetime | None = None) -> Eligibility:
    from fnmatch import fnmatch
    from posixpath import basename

    from .plugins import default_registry

    plugins = plugins or default_registry()
    now = now or dt.datetime.now(dt.timezone.utc)
    reasons = []
    if meta.stars <= MIN_STARS:
        reasons.append("stars")
    if (now - _parse_when(meta.last_activity)).days > ACTIVITY_DAYS:
        reasons.append("inactive")
    patterns: tuple[str, ...] = ()
    if meta.language and meta.language in plugins:
        patterns = plugins.lookup(meta.language).manifest_patterns
    else:
        for p in plugins:
            patterns += p.manifest_patterns
    names = [basename(f) for f in meta.files]
    has_manifest = any(fnmatch(n, pat) for n in names for pat in patterns)
    has_tests = any(part in TEST_DIRS for f in meta.files for part in f.split("/")[:-1])
    if not (has_manifest or has_tests):
        reasons.append("heuristics")
    priority = bool(plugins and meta.language == _first_scored_language(plugins)) and any(
        n.startswith("Dockerfile") or f.startswith(".github/workflows/") for n, f in zip(names, meta.files))
    return Eligibility(not reasons, reasons, priority)


def _first_scored_language(plugins) -> str | None:
    # the language scored by test reports gets the container/CI priority bit
    for p in plugins:
        if p.scoring == "test-report":
            return p.language
    return None


@dataclass
class SampleResult:
    selected: list[RepoMeta]
    per_cell: dict[str, int]
    shortfall: dict[str, int]


def cell_of(meta: RepoMeta) -> tuple[str, str]:
    return size_tier(meta.code_bytes), star_tier(meta.stars)


def stratified_sample(candidates: list[RepoMeta], quota: int, seed: int) -> SampleResult:
    """Seeded uniform draw of up to ``quota`` repositories per (size, stars) cell."""
    cells: dict[tuple[str, str], list[RepoMeta]] = {(s, t): [] for s in SIZE_TIERS for t in STAR_TIERS}
    for meta in sorted(candidates, key=lambda m: m.id):
        key = cell_of(meta)
        if key in cells:
            cells[key].append(meta)
    rng = random.Random(seed)
    selected: list[RepoMeta] = []
    per_cell, shortfall = {}, {}
    for key in sorted(cells):
        pool = cells[key]
        take = rng.sample(pool, min(quota, len(pool)))
        label = f"{key[0]}|{key[1]}"
        per_cell[label] = len(take)
        if len(take) < quota:
            shortfall[label] = quota - len(take)
        selected.extend(sorted(take, key=lambda m: m.id))
    return SampleResult(selected, per_cell, shortfall)


# -- records and aggregation -----------------------------------------------------

@dataclass
class EvalRecord:
    repo_id: str
    language: str
    scenario: str
    essr: float | None = None
    build_success: bool | None = None
    latency: float = 0.0
    tokens: int = 0
    outcome: str = ""
    categories: dict[str, int] = field(default_factory=dict)
    undefined_essr: bool = False
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.essr is not None and not 0.0 <= self.essr <= 1.0:
            raise ValueError("essr must lie in [0, 1]")
        if self.essr is not None and self.build_success is not None:
            raise ValueError("a record carries either essr or build_success, not both")

    @property
    def score(self) -> float | None:
        if self.essr is not None:
            return self.essr
        if self.build_success is not None:
            return 1.0 if self.build_success else 0.0
        return None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalRecord":
        return cls(**data)


def _mean(values: list[float]) -> float | None:
    return statistics.fmean(values) if values else None


def aggregate_report(records: list[EvalRecord]) -> dict:
    """Per-language and per-scenario means, latency and token means, failure histogram.

    ``avg`` for a language is the unweighted mean of its scenario means.
    """
    if not records:
        raise EmptyReport("no records to aggregate")
    languages: dict[str, dict] = {}
    for lang in sorted({r.language for r in records}):
        rows = [r for r in records if r.language == lang]
        scored = [r for r in rows if r.score is not None]
        scenarios = {}
        for tag in ScenarioTag:
            vals = [r.score for r in scored if r.scenario == tag.value]
            if vals:
                scenarios[tag.value] = _mean(vals)
        metric = "essr" if any(r.essr is not None for r in rows) else "build_success_rate"
        languages[lang] = {
            "metric": metric,
            "records": len(rows),
            "mean": _mean([r.score for r in scored]),
            "scenarios": scenarios,
            "avg": _mean(list(scenarios.values())),
            "undefined_essr": sum(1 for r in rows if r.undefined_essr),
        }
    histogram: dict[str, int] = {}
    for r in records:
        for k, v in r.categories.items():
            histogram[k] = histogram.get(k, 0) + v
    scenario_rows = {}
    for tag in ScenarioTag:
        vals = [r.score for r in records if r.scenario == tag.value and r.score is not None]
        if vals:
            scenario_rows[tag.value] = {"records": len(vals), "mean": _mean(vals)}
    return {
        "records": len(records),
        "languages": languages,
        "scenarios": scenario_rows,
        "latency_mean": _mean([r.latency for r in records]),
        "tokens_mean": _mean([float(r.tokens) for r in records]),
        "failure_categories": dict(sorted(histogram.items())),
        "undefined_essr": sum(1 for r in records if r.undefined_essr),
    }


def render_table(summary: dict) -> str:
    def cell(v):
        return "-" if v is None else f"{100 * v:.2f}"

    header = f"{'language':<10} {'metric':<19} {'S1':>7} {'S2':>7} {'S3':>7} {'Avg':>7}"
    lines = [header, "-" * len(header)]
    for lang, row in summary["languages"].items():
        sc = row["scenarios"]
        lines.append(f"{lang:<10} {row['metric']:<19} {cell(sc.get('S1')):>7} {cell(sc.get('S2')):>7} "
                     f"{cell(sc.get('S3')):>7} {cell(row['avg']):>7}")
    lines.append("")
    lat, tok = summary["latency_mean"], summary["tokens_mean"]
    lines.append(f"mean latency {lat:.1f} s, mean tokens {tok:.0f}, undefined ratios {summary['undefined_essr']}")
    if summary["failure_categories"]:
        lines.append("failures: " + ", ".join(f"{k}={v}" for k, v in summary["failure_categories"].items()))
    return "\n".join(lines) + "\n"
