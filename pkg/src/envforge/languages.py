"""Closed language registry and the static file tables the scanner needs.

This module and :mod:`envforge.plugins` are the only places that name
concrete languages; everything else goes through the plugin interface.
"""

from __future__ import annotations

from fnmatch import fnmatch

PYTHON = "python"
JAVA = "java"
RUST = "rust"
JS_TS = "js-ts"
GO = "go"
OTHER = "other"

REGISTRY_TAGS = (GO, JAVA, JS_TS, PYTHON, RUST, OTHER)

EXTENSIONS = {
    ".py": PYTHON,
    ".pyi": PYTHON,
    ".pyx": PYTHON,
    ".java": JAVA,
    ".rs": RUST,
    ".js": JS_TS,
    ".jsx": JS_TS,
    ".mjs": JS_TS,
    ".cjs": JS_TS,
    ".ts": JS_TS,
    ".tsx": JS_TS,
    ".mts": JS_TS,
    ".cts": JS_TS,
    ".go": GO,
}

# basename glob -> language affinity (None: language-neutral)
MANIFESTS = {
    "package.json": JS_TS,
    "pom.xml": JAVA,
    "build.gradle": JAVA,
    "build.gradle.kts": JAVA,
    "Cargo.toml": RUST,
    "go.mod": GO,
    "setup.py": PYTHON,
    "setup.cfg": PYTHON,
    "pyproject.toml": PYTHON,
    "Pipfile": PYTHON,
    "requirements*.txt": PYTHON,
}

LOCKFILES = {
    "poetry.lock": PYTHON,
    "Pipfile.lock": PYTHON,
    "uv.lock": PYTHON,
    "Cargo.lock": RUST,
    "package-lock.json": JS_TS,
    "yarn.lock": JS_TS,
    "pnpm-lock.yaml": JS_TS,
    "go.sum": GO,
}

TEST_DIRS = ("tests", "test", "testing", "__tests__", "spec")
TEST_FILE_GLOBS = {
    "test_*.py": PYTHON,
    "*_test.py": PYTHON,
    "*_test.go": GO,
    "*Test.java": JAVA,
    "*Tests.java": JAVA,
    "*.test.js": JS_TS,
    "*.test.ts": JS_TS,
    "*.spec.js": JS_TS,
    "*.spec.ts": JS_TS,
}


def language_for(path: str) -> str | None:
    dot = path.rfind(".")
    if dot < 0 or "/" in path[dot:]:
        return None
    return EXTENSIONS.get(path[dot:].lower())


def match_table(basename: str, table: dict[str, str | None]) -> tuple[bool, str | None]:
    for pattern, lang in table.items():
        if fnmatch(basename, pattern):
            return True, lang
    return False, None
