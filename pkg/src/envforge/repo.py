"""Repository model: file inventory, language profile, configuration artifacts,
and the read-only views (tree, outline, search) the toolset exposes."""

from __future__ import annotations

import ast
import os
import posixpath
import re
from dataclasses import dataclass, field
from fnmatch import fnmatch
from pathlib import Path

from . import languages
from .clock import SystemClock
from .errors import EmptyRepository, NotText, UndetectableLanguage, UnreadableRoot

DEFAULT_IGNORE = (
    ".git",
    ".hg",
    ".svn",
    "node_modules",
    "target",
    "dist",
    "venv",
    ".venv",
    "__pycache__",
    ".pytest_cache",
    ".mypy_cache",
    ".tox",
    "*.egg-info",
)

ARTIFACT_KINDS = ("dockerfile", "ci-pipeline", "build-manifest", "lockfile", "test-script", "readme")
TEXT_PROBE_BYTES = 8192


@dataclass(frozen=True)
class FileEntry:
    path: str
    size: int
    language: str | None
    is_code: bool


@dataclass(frozen=True)
class Repository:
    root: Path
    name: str
    files: tuple[FileEntry, ...]
    revision: str | None = None
    scanned_at: str = ""

    def to_dict(self) -> dict:
        # root is host-local and deliberately left out of the serialization
        return {
            "name": self.name,
            "revision": self.revision,
            "scanned_at": self.scanned_at,
            "files": [
                {"path": f.path, "size": f.size, "language": f.language, "is_code": f.is_code}
                for f in self.files
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, root: Path | str = ".") -> "Repository":
        files = tuple(FileEntry(**f) for f in data["files"])
        return cls(Path(root), data["name"], files, data.get("revision"), data.get("scanned_at", ""))

    def entry(self, path: str) -> FileEntry | None:
        return self._index.get(path)

    @property
    def _index(self) -> dict[str, FileEntry]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {f.path: f for f in self.files}
            object.__setattr__(self, "_idx", idx)
        return idx

    def abspath(self, path: str) -> Path:
        return self.root / path

    def has(self, pattern: str) -> bool:
        """True if any file path (or basename) matches the glob."""
        return any(fnmatch(f.path, pattern) or fnmatch(posixpath.basename(f.path), pattern) for f in self.files)


@dataclass(frozen=True)
class ConfigArtifact:
    kind: str
    path: str
    language: str | None = None


@dataclass(frozen=True)
class LanguageProfile:
    bytes_per_language: dict[str, int]
    dominant: str

    @property
    def total(self) -> int:
        return sum(self.bytes_per_language.values())


def _ignored(rel: str, rules: tuple[str, ...]) -> bool:
    parts = rel.split("/")
    for rule in rules:
        if fnmatch(rel, rule) or any(fnmatch(p, rule) for p in parts):
            return True
    return False


def _read_revision(root: Path) -> str | None:
    head = root / ".git" / "HEAD"
    try:
        text = head.read_text().strip()
    except OSError:
        return None
    if not text.startswith("ref:"):
        return text or None
    ref = text.split(None, 1)[1]
    ref_file = root / ".git" / ref
    if ref_file.is_file():
        return ref_file.read_text().strip()
    packed = root / ".git" / "packed-refs"
    if packed.is_file():
        for line in packed.read_text().splitlines():
            if line.endswith(" " + ref):
                return line.split()[0]
    return None


def scan_repository(root: Path | str, ignore: tuple[str, ...] | list[str] = DEFAULT_IGNORE,
                    name: str | None = None, clock=None) -> Repository:
    root = Path(root)
    if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
        raise UnreadableRoot(f"cannot read repository root: {root}")
    rules = tuple(ignore)
    entries: list[FileEntry] = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        rel_dir = os.path.relpath(dirpath, root)
        rel_dir = "" if rel_dir == "." else rel_dir.replace(os.sep, "/")
        dirnames[:] = sorted(d for d in dirnames if not _ignored(posixpath.join(rel_dir, d), rules))
        for fn in sorted(filenames):
            rel = posixpath.normpath(posixpath.join(rel_dir, fn))
            if _ignored(rel, rules):
                continue
            full = Path(dirpath) / fn
            if full.is_symlink() and not full.exists():
                continue
            try:
                size = full.stat().st_size
            except OSError:
                continue
            lang = languages.language_for(fn)
            entries.append(FileEntry(rel, size, lang, lang is not None))
    if not entries:
        raise EmptyRepository(f"no files under {root}")
    entries.sort(key=lambda e: e.path)
    clock = clock or SystemClock()
    return Repository(root, name or root.resolve().name, tuple(entries), _read_revision(root), clock.now())


def detect_artifacts(repo: Repository) -> list[ConfigArtifact]:
    found: set[ConfigArtifact] = set()
    for f in repo.files:
        base = posixpath.basename(f.path)
        parts = f.path.split("/")
        if base.startswith("Dockerfile") or base.endswith(".dockerfile") or base == "Containerfile":
            found.add(ConfigArtifact("dockerfile", f.path, None))
        if f.path.startswith(".github/workflows/") and base.endswith((".yml", ".yaml")):
            found.add(ConfigArtifact("ci-pipeline", f.path, None))
        hit, lang = languages.match_table(base, languages.MANIFESTS)
        if hit:
            found.add(ConfigArtifact("build-manifest", f.path, lang))
        hit, lang = languages.match_table(base, languages.LOCKFILES)
        if hit:
            found.add(ConfigArtifact("lockfile", f.path, lang))
        hit, lang = languages.match_table(base, languages.TEST_FILE_GLOBS)
        in_test_dir = any(p in languages.TEST_DIRS for p in parts[:-1])
        if hit or (in_test_dir and f.is_code):
            found.add(ConfigArtifact("test-script", f.path, lang or f.language))
        if base.upper().startswith("README"):
            found.add(ConfigArtifact("readme", f.path, None))
    return sorted(found, key=lambda a: (a.path, ARTIFACT_KINDS.index(a.kind)))


def language_bytes(repo: Repository) -> dict[str, int]:
    counts: dict[str, int] = {}
    for f in repo.files:
        if f.is_code and f.language:
            counts[f.language] = counts.get(f.language, 0) + f.size
    return counts


def dominant_language(repo: Repository) -> LanguageProfile:
    counts = language_bytes(repo)
    if not counts:
        raise UndetectableLanguage("repository has no files in a supported language")
    # argmax; ties go to the lexicographically smallest tag
    dominant = min(counts, key=lambda lang: (-counts[lang], lang))
    return LanguageProfile(dict(sorted(counts.items())), dominant)


# --------------------------------------------------------------------------- views

def is_text(path: Path) -> bool:
    with open(path, "rb") as fh:
        return b"\0" not in fh.read(TEXT_PROBE_BYTES)


def read_text(repo: Repository, path: str) -> str:
    full = repo.abspath(path)
    if not is_text(full):
        raise NotText(f"{path} is not a text file")
    return full.read_text(encoding="utf-8", errors="replace")


HIGHLIGHT_KINDS = {"dockerfile", "ci-pipeline", "build-manifest", "lockfile", "readme"}
TREE_MARK = "  <- key"


@dataclass
class _Node:
    name: str
    children: dict[str, "_Node"] = field(default_factory=dict)
    is_file: bool = False

    def count(self) -> int:
        return sum(1 + c.count() for c in self.children.values())


def _build_tree(repo: Repository) -> _Node:
    top = _Node(repo.name)
    for f in repo.files:
        node = top
        parts = f.path.split("/")
        for part in parts[:-1]:
            node = node.children.setdefault(part, _Node(part))
        node.children[parts[-1]] = _Node(parts[-1], is_file=True)
    return top


def directory_tree(repo: Repository, depth: int = 3, highlight: bool = True) -> str:
    if depth < 1:
        raise ValueError("depth must be >= 1")
    marked = {a.path for a in detect_artifacts(repo) if a.kind in HIGHLIGHT_KINDS} if highlight else set()
    lines = [repo.name + "/"]

    def walk(node: _Node, prefix: str, level: int, rel: str) -> None:
        kids = sorted(node.children.values(), key=lambda n: (n.is_file, n.name))
        for i, child in enumerate(kids):
            last = i == len(kids) - 1
            branch = "└── " if last else "├── "
            path = f"{rel}{child.name}"
            if child.is_file:
                lines.append(prefix + branch + child.name + (TREE_MARK if path in marked else ""))
            elif level >= depth:
                lines.append(f"{prefix}{branch}{child.name}/ (+{child.count()} more)")
            else:
                lines.append(prefix + branch + child.name + "/")
                walk(child, prefix + ("    " if last else "│   "), level + 1, path + "/")

    walk(_build_tree(repo), "", 1, "")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class OutlineEntry:
    path: str
    line: int
    kind: str
    signature: str
    depth: int = 0


def _python_outline(path: str, source: str) -> list[OutlineEntry]:
    tree = ast.parse(source)
    out: list[OutlineEntry] = []

    def visit(body, depth):
        for node in body:
            if isinstance(node, ast.ClassDef):
                bases = ", ".join(ast.unparse(b) for b in node.bases)
                out.append(OutlineEntry(path, node.lineno, "class",
                                        f"class {node.name}({bases})" if bases else f"class {node.name}", depth))
                visit(node.body, depth + 1)
            elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                prefix = "async def" if isinstance(node, ast.AsyncFunctionDef) else "def"
                sig = f"{prefix} {node.name}({ast.unparse(node.args)})"
                if node.returns is not None:
                    sig += f" -> {ast.unparse(node.returns)}"
                out.append(OutlineEntry(path, node.lineno, "function", sig, depth))
            elif isinstance(node, ast.AnnAssign) and depth == 0 and isinstance(node.target, ast.Name):
                out.append(OutlineEntry(path, node.lineno, "annotation",
                                        f"{node.target.id}: {ast.unparse(node.annotation)}", depth))

    visit(tree.body, 0)
    return out


_REGEX_OUTLINES: dict[str | None, list[tuple[str, re.Pattern]]] = {
    languages.JS_TS: [
        ("class", re.compile(r"^\s*(?:export\s+)?(?:default\s+)?(?:abstract\s+)?class\s+\w+[^{]*")),
        ("type", re.compile(r"^\s*(?:export\s+)?(?:interface|type|enum)\s+\w+[^{=]*")),
        ("function", re.compile(r"^\s*(?:export\s+)?(?:default\s+)?(?:async\s+)?function\s*\*?\s*\w+\s*\([^)]*\)[^{]*")),
        ("function", re.compile(r"^\s*(?:export\s+)?(?:const|let)\s+\w+\s*=\s*(?:async\s+)?\([^)]*\)\s*=>")),
    ],
    languages.JAVA: [
        ("class", re.compile(r"^\s*(?:public|protected|private|abstract|final|static|\s)*(?:class|interface|enum|record)\s+\w+[^{]*")),
        ("function", re.compile(r"^\s*(?:public|protected|private|static|final|abstract|synchronized|\s)+[\w<>\[\],\s]+\s+\w+\s*\([^)]*\)")),
    ],
    languages.RUST: [
        ("type", re.compile(r"^\s*(?:pub(?:\([^)]*\))?\s+)?(?:struct|enum|trait|type)\s+\w+[^{;]*")),
        ("class", re.compile(r"^\s*impl\b[^{]*")),
        ("function", re.compile(r"^\s*(?:pub(?:\([^)]*\))?\s+)?(?:async\s+)?(?:unsafe\s+)?fn\s+\w+[^{;]*")),
    ],
    languages.GO: [
        ("type", re.compile(r"^type\s+\w+\s+(?:struct|interface)\b")),
        ("function", re.compile(r"^func\s+(?:\([^)]*\)\s*)?\w+\s*\([^)]*\)[^{]*")),
    ],
    None: [
        ("class", re.compile(r"^\s*class\s+\w+[^:{]*")),
        ("function", re.compile(r"^\s*(?:def|function|func|fn|sub)\s+\w+\s*\([^)]*\)")),
    ],
}


def _regex_outline(path: str, source: str, language: str | None) -> list[OutlineEntry]:
    patterns = _REGEX_OUTLINES.get(language) or _REGEX_OUTLINES[None]
    out = []
    for lineno, line in enumerate(source.splitlines(), 1):
        for kind, pat in patterns:
            m = pat.match(line)
            if m:
                indent = len(line) - len(line.lstrip())
                out.append(OutlineEntry(path, lineno, kind, m.group(0).strip().rstrip("{").strip(), indent // 4))
                break
    return out


def file_outline(repo: Repository, path: str) -> list[OutlineEntry]:
    source = read_text(repo, path)
    lang = languages.language_for(path)
    if lang == languages.PYTHON:
        try:
            return _python_outline(path, source)
        except SyntaxError:
            pass
    return _regex_outline(path, source, lang)


def outline_entries(repo: Repository, target: str = "", recursive: bool = False) -> list[OutlineEntry]:
    target = target.strip("/")
    full = repo.abspath(target) if target else repo.root
    if full.is_file():
        return file_outline(repo, target)
    if not full.exists():
        raise FileNotFoundError(target)
    prefix = f"{target}/" if target else ""
    out = []
    for f in repo.files:
        if not f.path.startswith(prefix) or not f.is_code:
            continue
        if not recursive and "/" in f.path[len(prefix):]:
            continue
        if not is_text(repo.abspath(f.path)):
            continue
        out.extend(file_outline(repo, f.path))
    return out


def code_outline(repo: Repository, target: str = "", recursive: bool = False, line_numbers: bool = False) -> str:
    lines = []
    current = None
    for e in outline_entries(repo, target, recursive):
        if e.path != current:
            current = e.path
            lines.append(f"# {e.path}")
        num = f"{e.line:>5}: " if line_numbers else ""
        lines.append(f"{num}{'    ' * e.depth}{e.signature}")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class SearchHit:
    path: str
    line: int
    excerpt: str
    context: tuple[str, ...] = ()


def search_code(repo: Repository, query: str, mode: str = "simple") -> list[SearchHit]:
    if not query:
        raise ValueError("query must be non-empty")
    if mode not in ("detailed", "simple"):
        raise ValueError(f"unknown search mode: {mode}")
    readmes = {a.path for a in detect_artifacts(repo) if a.kind == "readme"}
    hits = []
    for f in repo.files:
        if not (f.is_code or f.path in readmes):
            continue
        full = repo.abspath(f.path)
        if not is_text(full):
            continue
        lines = full.read_text(encoding="utf-8", errors="replace").splitlines()
        for i, line in enumerate(lines):
            if query in line:
                ctx = tuple(lines[max(0, i - 2): i + 3]) if mode == "detailed" else ()
                hits.append(SearchHit(f.path, i + 1, line.strip(), ctx))
    return hits
