from __future__ import annotations

import json

import pytest

from envforge.errors import AlreadyRegistered, PluginMismatch, UnsupportedLanguage
from envforge.plugins import (
    PYTHON_PLUGIN, LanguagePlugin, PluginRegistry, VerificationSequence, VerificationStep, default_registry,
    derive_verification_sequence, matches_verify_command,
)
from envforge.repo import scan_repository


def write(root, rel, text="x = 1\n"):
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def test_registry_holds_five_shipped_languages():
    reg = default_registry()
    assert len(reg) == 5
    assert [p.language for p in reg] == ["go", "java", "js-ts", "python", "rust"]


def test_duplicate_and_unknown_languages():
    reg = default_registry()
    with pytest.raises(AlreadyRegistered):
        reg.register(PYTHON_PLUGIN)
    with pytest.raises(UnsupportedLanguage):
        reg.lookup("cobol")


def test_build_commands_per_language():
    reg = default_registry()
    assert "cargo build" in reg.lookup("rust").verify_commands
    java = reg.lookup("java")
    assert "mvn clean install" in java.verify_commands
    assert any("gradle" in c for v in java.verify_variants for c in v.commands)


def test_plugin_needs_verify_commands():
    data = PYTHON_PLUGIN.to_dict()
    data["verify_commands"] = [" "]
    with pytest.raises(ValueError):
        LanguagePlugin.from_dict(data)


def test_plugin_roundtrips_through_json_file(tmp_path):
    data = PYTHON_PLUGIN.to_dict()
    data["language"] = "python2"
    path = tmp_path / "plugins.json"
    path.write_text(json.dumps([data]))
    reg = PluginRegistry().load_file(path)
    assert reg.lookup("python2").verify_commands == PYTHON_PLUGIN.verify_commands


def test_python_with_tests_uses_test_runner(tmp_path):
    write(tmp_path, "pkg/mod.py")
    write(tmp_path, "tests/test_mod.py", "def test_x():\n    pass\n")
    seq = derive_verification_sequence(scan_repository(tmp_path), PYTHON_PLUGIN)
    assert seq.steps[-1] == VerificationStep("run-pytest", "test-report")


def test_go_manifest_only_builds_then_tests(tmp_path):
    write(tmp_path, "go.mod", "module x\n")
    write(tmp_path, "main.go", "package main\n")
    seq = derive_verification_sequence(scan_repository(tmp_path), default_registry().lookup("go"))
    assert [c.split()[:2] for c in seq.commands] == [["go", "build"], ["go", "test"]]
    assert all(s.success_rule == "exit-zero" for s in seq.steps)


def test_js_uses_npm_install(tmp_path):
    write(tmp_path, "package.json", "{}")
    write(tmp_path, "index.js", "console.log(1)\n")
    seq = derive_verification_sequence(scan_repository(tmp_path), default_registry().lookup("js-ts"))
    assert seq.commands == ["npm install"]
    write(tmp_path, "yarn.lock", "")
    seq = derive_verification_sequence(scan_repository(tmp_path), default_registry().lookup("js-ts"))
    assert seq.commands == ["yarn install"]


def test_ci_commands_win_without_tests(tmp_path):
    write(tmp_path, "Cargo.toml", "[package]\n")
    write(tmp_path, "src/main.rs", "fn main() {}\n")
    write(tmp_path, ".github/workflows/ci.yml", "jobs: {}\n")
    seq = derive_verification_sequence(scan_repository(tmp_path), default_registry().lookup("rust"),
                                       ci_extractor=lambda repo: ["cargo build --release"])
    assert seq.origin == "ci-derived"
    assert seq.commands == ["cargo build --release"]


def test_mismatched_plugin_is_rejected(tmp_path):
    write(tmp_path, "main.go", "package main\n")
    with pytest.raises(PluginMismatch):
        derive_verification_sequence(scan_repository(tmp_path), PYTHON_PLUGIN)


def test_sequence_rejects_empty_steps():
    with pytest.raises(ValueError):
        VerificationSequence((), "plugin-default")
    with pytest.raises(ValueError):
        VerificationSequence((VerificationStep("x"),), "guessed")


def test_install_rendering_handles_missing_mirror():
    js = default_registry().lookup("js-ts")
    assert js.render_install(mirror="") == ["cd /repo && npm install"]
    assert js.render_install(mirror="https://m.example") == ["cd /repo && npm install --registry https://m.example"]
    py = PYTHON_PLUGIN.render_install(manifest_path="requirements.txt")
    assert py[0] == "pip install --no-cache-dir -r requirements.txt"
    assert PYTHON_PLUGIN.render_mirror_steps({}) == []
    assert PYTHON_PLUGIN.render_mirror_steps({"pypi": "https://p"}) == ["pip config set global.index-url https://p"]


def test_verify_command_matching():
    assert matches_verify_command("cd /repo && python -m pytest -q", PYTHON_PLUGIN)
    assert not matches_verify_command("python -m pip install pytest", PYTHON_PLUGIN)
    java = default_registry().lookup("java")
    assert matches_verify_command("./gradlew clean build", java)
