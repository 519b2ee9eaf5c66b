from __future__ import annotations

import datetime as dt
import json
import shutil
import subprocess
import sys

import pytest

from envforge.errors import EmptyReport, UndefinedESSR
from envforge.evaluation import (
    DefectCache, EvalRecord, RepoMeta, ScenarioTag, TestOutcome, TestResult, aggregate_report, build_success,
    categorize_failures, classify_scenario, compute_essr, eligibility, outcome_from_results, parse_junit,
    reference_defects, render_table, restrict_to_verified, scenario_flags, size_tier, star_tier, stratified_sample,
)
from envforge.plugins import default_registry
from envforge.repo import detect_artifacts, scan_repository
from envforge.tools.testing import run_pytest

NOW = dt.datetime(2026, 6, 1, tzinfo=dt.timezone.utc)


def outcome(passed, total, verified=None):
    return TestOutcome(total, passed, total - passed, 0, 0, verified)


# -- success ratio -----------------------------------------------------------------------

@pytest.mark.parametrize("passed, verified, expected", [(7, 10, 0.7), (0, 4, 0.0), (5, 5, 1.0)])
def test_essr_direct_ratio(passed, verified, expected):
    assert compute_essr(outcome(passed, verified)) == expected


def test_essr_undefined_without_verified_tests():
    with pytest.raises(UndefinedESSR):
        compute_essr(TestOutcome(), ScenarioTag.S3)
    with pytest.raises(ValueError):
        TestOutcome(3, 4, 0, 0, 0)


REFERENCE_SUITE = {
    "calc.py": "def inc(x):\n    return x + 1\n",
    "tests/test_calc.py": "from calc import inc\n\n\ndef test_one():\n    assert inc(1) == 2\n\n\n"
                          "def test_two():\n    assert inc(2) == 3\n\n\n"
                          "def test_upstream_bug():\n    assert inc(0) == 0  # wrong upstream, fails everywhere\n",
}


def test_inherent_defects_leave_the_denominator(make_sandbox, tmp_path):
    ws = tmp_path / "suite"
    for rel, text in REFERENCE_SUITE.items():
        (ws / rel).parent.mkdir(parents=True, exist_ok=True)
        (ws / rel).write_text(text)
    # known-good reference: the suite run straight on the host
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider"], cwd=ws,
                          capture_output=True, text=True)
    assert "1 failed, 2 passed" in proc.stdout
    reference, _ = run_pytest(make_sandbox(ws))
    defects = reference_defects(reference)
    assert defects == ["tests.test_calc::test_upstream_bug"]
    cache = DefectCache(tmp_path / "defects.json")
    cache.put("calc", defects)
    assert cache.get("calc") == defects and cache.get("other") is None

    agent, _ = run_pytest(make_sandbox(ws))
    scored = restrict_to_verified(agent, cache.get("calc"))
    assert (scored.total, scored.verified, scored.passed) == (3, 2, 2)
    assert compute_essr(scored, ScenarioTag.S2) == 1.0
    assert compute_essr(agent) == pytest.approx(2 / 3)


# -- failure categories ------------------------------------------------------------------------

CANNED = {"results": [
    {"nodeid": "t::a", "outcome": "failed", "error_class": "ConnectionError"},
    {"nodeid": "t::b", "outcome": "error", "error_class": "requests.exceptions.ConnectionError"},
    {"nodeid": "t::c", "outcome": "failed", "error_class": "ZeroDivisionError"},
    {"nodeid": "t::d", "outcome": "passed"},
]}


def test_categories_from_canned_report():
    assert categorize_failures(CANNED) == {"ConnectionError": 2, "RuntimeError": 1}
    assert categorize_failures(json.dumps(CANNED)) == {"ConnectionError": 2, "RuntimeError": 1}


def test_clean_and_garbage_reports():
    assert categorize_failures({"results": [{"nodeid": "x", "outcome": "passed"}]}) == {}
    assert categorize_failures("FAILED a\nERROR b\nnoise") == {"other": 2}
    assert categorize_failures("%%%") == {"other": 1}
    assert categorize_failures("") == {}


JUNIT = """<?xml version="1.0"?>
<testsuites><testsuite name="pytest">
  <testcase classname="tests.test_net" name="test_fetch">
    <failure message="urllib3.exceptions.NewConnectionError: refused">E   urllib3.exceptions.NewConnectionError: refused</failure>
  </testcase>
  <testcase classname="tests.test_net" name="test_skip"><skipped message="later"/></testcase>
  <testcase classname="tests.test_imp" name="test_import">
    <error message="collection failure">E   ModuleNotFoundError: No module named 'x'</error>
  </testcase>
  <testcase classname="tests.test_ok" name="test_ok"/>
</testsuite></testsuites>"""


def test_junit_parsing():
    res = parse_junit(JUNIT)
    assert (res.total, res.passed, res.failed, res.errored, res.skipped) == (3, 1, 1, 1, 1)
    assert res.categories == {"ConnectionError": 1, "ModuleNotFoundError": 1}
    assert categorize_failures(JUNIT) == res.categories
    again = TestOutcome.from_dict(json.loads(json.dumps(res.to_dict())))
    assert again == res


# -- scenarios ------------------------------------------------------------------------------------

@pytest.mark.parametrize("name, tag", [("with_container", "S1"), ("with_ci", "S1"), ("tests_only", "S2"),
                                       ("minipkg", "S2"), ("bare", "S3")])
def test_scenarios_on_fixture_repos(copy_repo, name, tag):
    repo = scan_repository(copy_repo(name))
    assert classify_scenario(repo, detect_artifacts(repo)).value == tag


def test_container_without_tests_is_flagged(tmp_path):
    (tmp_path / "app.py").write_text("print(1)\n")
    (tmp_path / "Dockerfile").write_text("FROM python:3.10\n")
    repo = scan_repository(tmp_path)
    arts = detect_artifacts(repo)
    assert classify_scenario(repo, arts) is ScenarioTag.S3
    assert scenario_flags(arts) == ["s3-with-containerization"]


# -- build verdicts ------------------------------------------------------------------------------------

def test_rust_crate_builds(make_sandbox, copy_repo):
    if shutil.which("cargo") is None:
        pytest.skip("cargo is not installed on this host")
    root = copy_repo("rustcrate")
    rust = default_registry().lookup("rust")
    ok, log = build_success(make_sandbox(root), rust.resolve_verify_commands(scan_repository(root)), 600)
    assert ok, log
    assert log.startswith("$ cargo build")


def test_go_module_builds_and_tests(make_sandbox, copy_repo):
    if shutil.which("go") is None:
        pytest.skip("go toolchain is not installed on this host")
    root = copy_repo("gomod")
    go = default_registry().lookup("go")
    ok, log = build_success(make_sandbox(root), go.resolve_verify_commands(scan_repository(root)), 600)
    assert ok, log


def test_java_broken_pin_fails_with_log(make_sandbox, copy_repo):
    if shutil.which("mvn") is None:
        pytest.skip("maven is not installed on this host")
    root = copy_repo("javabad")
    java = default_registry().lookup("java")
    ok, log = build_success(make_sandbox(root), java.resolve_verify_commands(scan_repository(root)), 600)
    assert not ok and "no-such-artifact" in log


def test_build_stops_at_first_failure(make_sandbox):
    ok, log = build_success(make_sandbox(), ["true", "exit 3", "echo never"])
    assert not ok
    assert log.splitlines() == ["$ true", "[exit code 0]", "$ exit 3", "[exit code 3]"]


# -- tiers ------------------------------------------------------------------------------------------------

@pytest.mark.parametrize("size, tier", [(0, "small"), (400_000, "small"), (499_999, "small"),
                                        (500_000, "medium"), (5_000_000, "medium"), (5_000_001, "large")])
def test_size_tier_boundaries(size, tier):
    assert size_tier(size) == tier


@pytest.mark.parametrize("stars, tier", [(0, "ineligible"), (10, "ineligible"), (11, "(10,100]"), (50, "(10,100]"),
                                         (100, "(10,100]"), (101, "(100,1000]"), (1000, "(100,1000]"),
                                         (1001, "(1000,inf)"), (5000, "(1000,inf)")])
def test_star_tier_boundaries(stars, tier):
    assert star_tier(stars) == tier


def test_tiers_reject_negatives():
    with pytest.raises(ValueError):
        size_tier(-1)
    with pytest.raises(ValueError):
        star_tier(-1)


# -- eligibility and sampling ---------------------------------------------------------------------------

def test_eligibility_rules():
    low = RepoMeta("a/low", 9, "2026-05-01", "python", ["setup.py"])
    assert eligibility(low, now=NOW).reasons == ["stars"]
    java = RepoMeta("a/java", 40, "2026-03-01T10:00:00Z", "java", ["pom.xml", "src/main/java/App.java"])
    assert eligibility(java, now=NOW).eligible
    stale = RepoMeta("a/old", 40, "2024-01-01", "java", ["pom.xml"])
    assert eligibility(stale, now=NOW).reasons == ["inactive"]
    plain = RepoMeta("a/plain", 40, "2026-05-01", "python", ["notes.txt"])
    assert eligibility(plain, now=NOW).reasons == ["heuristics"]
    tested = RepoMeta("a/tested", 40, "2026-05-01", "python", ["tests/test_x.py"])
    assert eligibility(tested, now=NOW).eligible


def test_python_container_priority_bit():
    meta = RepoMeta("a/p", 40, "2026-05-01", "python", ["setup.py", "Dockerfile"])
    assert eligibility(meta, now=NOW).priority
    meta = RepoMeta("a/r", 40, "2026-05-01", "rust", ["Cargo.toml", "Dockerfile"])
    assert not eligibility(meta, now=NOW).priority


SIZES = {"small": 1_000, "medium": 1_000_000, "large": 9_000_000}
STARS = {"(10,100]": 50, "(100,1000]": 500, "(1000,inf)": 5000}


def grid(per_cell=3, skip=()):
    out = []
    for s, size in SIZES.items():
        for t, stars in STARS.items():
            if (s, t) in skip:
                continue
            out += [RepoMeta(f"{s}-{t}-{i}", stars, "2026-05-01", code_bytes=size) for i in range(per_cell)]
    return out


def test_sample_fills_every_cell():
    res = stratified_sample(grid(), 2, seed=7)
    assert len(res.selected) == 18 and set(res.per_cell.values()) == {2} and res.shortfall == {}


def test_sample_reports_shortfall():
    res = stratified_sample(grid(skip=[("large", "(1000,inf)")]), 2, seed=7)
    assert res.shortfall == {"large|(1000,inf)": 2} and len(res.selected) == 16


def test_sample_is_deterministic_under_reordering():
    cands = grid()
    a = stratified_sample(cands, 2, seed=11)
    b = stratified_sample(list(reversed(cands)), 2, seed=11)
    assert [m.id for m in a.selected] == [m.id for m in b.selected]


# -- records and aggregation ---------------------------------------------------------------------------------

def test_record_invariants():
    with pytest.raises(ValueError):
        EvalRecord("r", "python", "S1", essr=1.5)
    with pytest.raises(ValueError):
        EvalRecord("r", "rust", "S2", essr=0.5, build_success=True)
    assert EvalRecord("r", "rust", "S2", build_success=False).score == 0.0


def test_aggregate_means_and_columns():
    records = [EvalRecord("a", "python", "S1", essr=1.0, latency=10, tokens=100),
               EvalRecord("b", "python", "S2", essr=0.5, latency=20, tokens=200,
                          categories={"ImportError": 1}),
               EvalRecord("c", "python", "S3", essr=0.0, latency=30, tokens=300),
               EvalRecord("d", "python", "S3", undefined_essr=True),
               EvalRecord("e", "rust", "S1", build_success=True),
               EvalRecord("f", "rust", "S1", build_success=False)]
    summary = aggregate_report(records)
    py = summary["languages"]["python"]
    assert py["mean"] == pytest.approx(0.5) and py["undefined_essr"] == 1
    assert py["scenarios"] == {"S1": 1.0, "S2": 0.5, "S3": 0.0}
    assert summary["languages"]["rust"]["metric"] == "build_success_rate"
    assert summary["languages"]["rust"]["mean"] == 0.5
    assert summary["failure_categories"] == {"ImportError": 1}
    header = render_table(summary).splitlines()[0].split()
    assert header[-4:] == ["S1", "S2", "S3", "Avg"]
    with pytest.raises(EmptyReport):
        aggregate_report([])


def test_mixed_scenarios_give_two_rows():
    summary = aggregate_report([EvalRecord("a", "python", "S1", essr=1.0), EvalRecord("b", "python", "S2", essr=0.0)])
    assert sorted(summary["scenarios"]) == ["S1", "S2"]


def test_outcome_from_results_counts():
    res = outcome_from_results([TestResult("a", "passed"), TestResult("b", "failed", "AssertionError"),
                                TestResult("c", "skipped")])
    assert (res.total, res.passed, res.failed, res.skipped) == (2, 1, 1, 1)
    assert res.categories == {"AssertionError": 1}
