from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from envforge.errors import BudgetExceeded, NoCandidates, SpecParseFailure
from envforge.images import (
    AllowedVersions, FixtureRegistryClient, ImageCandidate, ImageSpec, RegistryRow, analyze_requirements,
    default_pool_candidates, parse_scores, score_and_select, score_candidates, search_registry, select_base_image,
    select_best, spec_from_reply,
)
from envforge.llm import BudgetLedger, LLMClient, ScriptedBackend
from envforge.plugins import default_registry
from envforge.repo import detect_artifacts, scan_repository

ALLOWED = AllowedVersions.load()


def scripted(*replies):
    return LLMClient("live", ScriptedBackend(list(replies)))


def spec_for(language="python", version="3.10", variant="slim", **extra):
    versions = ALLOWED[language]
    return spec_from_reply({"version": version, "variant": variant, **extra}, language, versions)


def test_reply_becomes_full_image_reference():
    spec = spec_from_reply({"language": "python", "version": "3.10", "variant": "slim", "confidence": 0.9},
                           "python", ALLOWED["python"])
    assert spec.full_image == "python:3.10-slim"
    assert not spec.clamped and spec.confidence == 0.9


def test_unlisted_version_is_clamped_with_penalty():
    spec = spec_from_reply({"version": "2.4", "variant": "slim", "confidence": 0.9}, "python", ALLOWED["python"])
    assert spec.version == ALLOWED["python"].default_version
    assert spec.clamped
    assert spec.confidence == pytest.approx(0.7)


def test_missing_variant_uses_default():
    spec = spec_from_reply({"version": "17"}, "java", ALLOWED["java"])
    assert spec.full_image == "openjdk:17"


def test_java_pool_contains_openjdk_17():
    pool = default_pool_candidates(spec_for("java", "17", ""), default_registry())
    assert "openjdk:17" in [c.reference for c in pool]
    assert pool[0].reference == "openjdk:17"


def test_analysis_reprompts_then_fails(tmp_path):
    (tmp_path / "m.py").write_text("x = 1\n")
    repo = scan_repository(tmp_path)
    llm = scripted("no json here", "still none")
    with pytest.raises(SpecParseFailure):
        analyze_requirements(repo, detect_artifacts(repo), llm, BudgetLedger(), ALLOWED, "python")
    assert len(llm.exchanges) == 2


def test_token_budget_stops_before_any_call(tmp_path):
    (tmp_path / "m.py").write_text("x = 1\n")
    repo = scan_repository(tmp_path)
    llm = scripted('{"version": "3.10"}')
    with pytest.raises(BudgetExceeded):
        analyze_requirements(repo, detect_artifacts(repo), llm, BudgetLedger(token_limit=5), ALLOWED, "python")
    assert llm.exchanges == []


def test_registry_candidates_equal_fixture_rows():
    rows = {"pytorch cuda": [RegistryRow("pytorch/pytorch", "2.1-cuda", stars=900)],
            "python ml": [RegistryRow("jupyter/scipy", "latest"), RegistryRow("pytorch/pytorch", "2.1-cuda")]}
    llm = scripted(json.dumps(["pytorch cuda", "python ml"]))
    found = search_registry(spec_for(), llm, BudgetLedger(), FixtureRegistryClient(rows))
    assert [c.reference for c in found] == ["pytorch/pytorch:2.1-cuda", "jupyter/scipy:latest"]
    assert {c.source for c in found} == {"registry-search"}


def test_registry_failure_degrades_to_warning():
    warnings = []
    llm = scripted(json.dumps(["q"]))
    found = search_registry(spec_for(), llm, BudgetLedger(), FixtureRegistryClient({}, fail=True),
                            on_warning=warnings.append)
    assert found == [] and warnings


def test_tie_prefers_default_pool():
    a = ImageCandidate("zzz/python:3.10", "registry-search", 0.9)
    b = ImageCandidate("python:3.10-slim", "default-pool", 0.9)
    assert select_best([a, b]).reference == "python:3.10-slim"
    assert select_best([b, a]).reference == "python:3.10-slim"


def test_unparseable_scores_fall_back_to_pool():
    spec = spec_for()
    cands = [ImageCandidate("org/img:1", "registry-search"), ImageCandidate("python:3.10-slim")]
    ranked, ok = score_candidates(spec, cands, scripted("nope", "nope"), BudgetLedger())
    assert not ok and ranked[0].reference == "python:3.10-slim"


def test_scores_are_clamped_and_validated():
    assert parse_scores([{"reference": "a", "score": 1.5}, {"reference": "b", "score": -1}]) == {"a": 1.0, "b": 0.0}
    with pytest.raises(ValueError):
        parse_scores([{"reference": "a", "score": "high"}])
    with pytest.raises(NoCandidates):
        select_best([])


def test_hub_search_path_scores_pool_and_registry(tmp_path):
    (tmp_path / "train.py").write_text("import torch\n")
    repo = scan_repository(tmp_path)
    analysis = {"version": "3.10", "variant": "slim", "search_hub": True, "frameworks": ["pytorch"]}
    scores = [{"reference": "pytorch/pytorch:2.1-cuda", "score": 0.95}]
    llm = scripted(json.dumps(analysis), json.dumps(["pytorch"]), json.dumps(scores))
    client = FixtureRegistryClient([RegistryRow("pytorch/pytorch", "2.1-cuda")])
    sel = select_base_image(repo, detect_artifacts(repo), llm, BudgetLedger(), ALLOWED, default_registry(), client)
    assert sel.selected.reference == "pytorch/pytorch:2.1-cuda"
    assert any(c.source == "default-pool" for c in sel.candidates)


refs = st.lists(st.text("abcdefgh:.-", min_size=1, max_size=8), min_size=1, max_size=12, unique=True)


@settings(max_examples=1000, deadline=None)
@given(refs=refs, data=st.data())
def test_selection_is_argmax_and_permutation_invariant(refs, data):
    scores = data.draw(st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), min_size=len(refs),
                                max_size=len(refs)))
    sources = data.draw(st.lists(st.sampled_from(["default-pool", "registry-search"]), min_size=len(refs),
                                 max_size=len(refs)))
    cands = [ImageCandidate(r, s, x) for r, s, x in zip(refs, sources, scores)]
    best = select_best(cands)
    assert best.score == max(scores)
    shuffled = list(cands)
    random.Random(data.draw(st.integers(0, 2**16))).shuffle(shuffled)
    assert select_best(shuffled) == best


def test_scripted_scores_select_the_maximum():
    spec = spec_for()
    cands = [ImageCandidate("python:3.10-slim"), ImageCandidate("org/a:1", "registry-search"),
             ImageCandidate("org/b:1", "registry-search")]
    reply = json.dumps([{"reference": "python:3.10-slim", "score": 0.4}, {"reference": "org/a:1", "score": 0.8},
                        {"reference": "org/b:1", "score": 0.6}])
    assert score_and_select(spec, cands, scripted(reply), BudgetLedger()).reference == "org/a:1"


def test_spec_fields_are_frozen():
    spec = spec_for()
    assert isinstance(spec, ImageSpec)
    with pytest.raises(Exception):
        spec.version = "3.12"
