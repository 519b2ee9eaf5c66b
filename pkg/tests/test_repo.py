from __future__ import annotations

import subprocess

import pytest

from envforge.clock import FrozenClock
from envforge.errors import EmptyRepository, NotText, UndetectableLanguage, UnreadableRoot
from envforge.repo import (
    ConfigArtifact, Repository, code_outline, detect_artifacts, directory_tree, dominant_language, file_outline,
    language_bytes, outline_entries, read_text, scan_repository, search_code,
)


def write(root, rel, text="", size=None):
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if size is None else "x" * size)
    return path


def test_language_bytes_match_file_sizes(tmp_path):
    write(tmp_path, "a.py", size=600)
    write(tmp_path, "b.js", size=400)
    # frozen from `stat -c %s a.py b.js`
    assert language_bytes(scan_repository(tmp_path)) == {"python": 600, "js-ts": 400}


def test_scan_ignores_vcs_and_caches(tmp_path):
    write(tmp_path, "pkg/mod.py", "x = 1\n")
    write(tmp_path, ".git/config", "[core]\n")
    write(tmp_path, "node_modules/lib/index.js", "1")
    write(tmp_path, "pkg/__pycache__/mod.cpython-310.pyc", "x")
    repo = scan_repository(tmp_path)
    assert [f.path for f in repo.files] == ["pkg/mod.py"]


def test_scan_errors(tmp_path):
    with pytest.raises(UnreadableRoot):
        scan_repository(tmp_path / "missing")
    with pytest.raises(EmptyRepository):
        scan_repository(tmp_path)


def test_scan_is_deterministic_and_serializable(tmp_path):
    write(tmp_path, "b.py", "b = 2\n")
    write(tmp_path, "a.py", "a = 1\n")
    one = scan_repository(tmp_path, clock=FrozenClock())
    two = scan_repository(tmp_path, clock=FrozenClock())
    assert one.to_dict() == two.to_dict()
    again = Repository.from_dict(one.to_dict(), tmp_path)
    assert again.files == one.files


def test_artifacts_for_java_manifest(tmp_path):
    write(tmp_path, "pom.xml", "<project/>")
    write(tmp_path, "src/App.java", "class App {}")
    arts = detect_artifacts(scan_repository(tmp_path))
    assert ConfigArtifact("build-manifest", "pom.xml", "java") in arts


def test_artifacts_for_rust_manifest_and_lockfile(tmp_path):
    write(tmp_path, "Cargo.toml", "[package]\n")
    write(tmp_path, "Cargo.lock", "")
    write(tmp_path, "src/main.rs", "fn main() {}")
    kinds = {(a.kind, a.path) for a in detect_artifacts(scan_repository(tmp_path))}
    assert ("build-manifest", "Cargo.toml") in kinds
    assert ("lockfile", "Cargo.lock") in kinds


def test_artifacts_cover_container_ci_tests_and_readme(copy_repo):
    with_ci = detect_artifacts(scan_repository(copy_repo("with_ci")))
    kinds = {a.kind for a in with_ci}
    assert {"ci-pipeline", "test-script"} <= kinds
    box = {a.kind for a in detect_artifacts(scan_repository(copy_repo("with_container")))}
    assert {"dockerfile", "test-script", "readme"} <= box


def test_dominant_language_tie_goes_to_smaller_tag(tmp_path):
    write(tmp_path, "a.py", size=500)
    write(tmp_path, "b.go", size=500)
    assert dominant_language(scan_repository(tmp_path)).dominant == "go"


def test_dominant_language_needs_code(tmp_path):
    write(tmp_path, "notes.txt", "hello")
    with pytest.raises(UndetectableLanguage):
        dominant_language(scan_repository(tmp_path))


def test_tree_collapses_below_depth(tmp_path):
    write(tmp_path, "l1/l2/l3/l4/l5/deep.py", "x = 1\n")
    write(tmp_path, "l1/l2/l3/l4/side.py", "y = 1\n")
    tree = directory_tree(scan_repository(tmp_path, name="deep"), depth=3)
    # entries below l1/l2/l3, counted with `find l1/l2/l3 -mindepth 1 | wc -l`
    below = subprocess.run(["find", "l1/l2/l3", "-mindepth", "1"], cwd=tmp_path, capture_output=True, text=True)
    assert len(below.stdout.split()) == 4
    assert "l3/ (+4 more)" in tree
    assert "l4" not in tree


def test_tree_marks_key_files(copy_repo):
    tree = directory_tree(scan_repository(copy_repo("with_container")), depth=2)
    assert "Dockerfile  <- key" in tree
    assert "README.md  <- key" in tree


def test_outline_python_and_recursive_union(tmp_path):
    write(tmp_path, "pkg/a.py", "class A:\n    def m(self, x):\n        pass\n\ndef f():\n    pass\n")
    write(tmp_path, "pkg/sub/b.py", "def g(y=1):\n    return y\n")
    repo = scan_repository(tmp_path)
    union = file_outline(repo, "pkg/a.py") + file_outline(repo, "pkg/sub/b.py")
    assert outline_entries(repo, "pkg", recursive=True) == union
    assert outline_entries(repo, "pkg", recursive=False) == file_outline(repo, "pkg/a.py")
    text = code_outline(repo, "pkg/a.py", line_numbers=True)
    assert "class A" in text and "def m(self, x)" in text


def test_search_matches_grep(tmp_path):
    write(tmp_path, "app.py", "import os\nimport flask\n\napp = flask.Flask(__name__)\n")
    write(tmp_path, "other.py", "# import flask later\n")
    repo = scan_repository(tmp_path)
    hits = {(h.path, h.line) for h in search_code(repo, "import flask")}
    grep = subprocess.run(["grep", "-rnF", "import flask", "."], cwd=tmp_path, capture_output=True, text=True)
    oracle = {(p[2:], int(n)) for p, n, _ in (ln.split(":", 2) for ln in grep.stdout.splitlines())}
    assert hits == oracle == {("app.py", 2), ("other.py", 1)}


def test_search_detailed_has_context(tmp_path):
    write(tmp_path, "m.py", "a = 1\nb = 2\nneedle = 3\nc = 4\n")
    hit, = search_code(scan_repository(tmp_path), "needle", mode="detailed")
    assert hit.context == ("a = 1", "b = 2", "needle = 3", "c = 4")


def test_binary_files_are_not_text(tmp_path):
    (tmp_path / "blob.py").write_bytes(b"\0\1\2")
    write(tmp_path, "ok.py", "x = 1\n")
    repo = scan_repository(tmp_path)
    with pytest.raises(NotText):
        read_text(repo, "blob.py")
