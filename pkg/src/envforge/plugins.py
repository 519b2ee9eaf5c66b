"""Language plugins: everything language-specific lives behind this interface."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from fnmatch import fnmatch
from pathlib import Path
from typing import Callable, Iterator

from . import languages as L
from .errors import AlreadyRegistered, PluginMismatch, UnsupportedLanguage
from .repo import ConfigArtifact, Repository, detect_artifacts, dominant_language

SUCCESS_RULES = ("exit-zero", "test-report")
ORIGINS = ("plugin-default", "ci-derived", "readme-derived", "synthesized")


@dataclass(frozen=True)
class RuntimeFamily:
    image: str
    version: str
    variant: str = ""

    def reference(self, version: str | None = None, variant: str | None = None) -> str:
        version = version or self.version
        variant = self.variant if variant is None else variant
        return f"{self.image}:{version}-{variant}" if variant else f"{self.image}:{version}"


@dataclass(frozen=True)
class VerifyVariant:
    """Verify commands used when a file matching ``when`` exists (first match wins)."""

    when: str
    commands: tuple[str, ...]


@dataclass(frozen=True)
class LanguagePlugin:
    language: str
    manifest_patterns: tuple[str, ...]
    lockfile_patterns: tuple[str, ...]
    runtime: RuntimeFamily
    install_templates: tuple[str, ...]
    verify_commands: tuple[str, ...]
    test_runner: str | None = None
    version_switch: bool = False
    verify_variants: tuple[VerifyVariant, ...] = ()
    ecosystem: str = ""
    mirror_templates: tuple[str, ...] = ()
    runner_install: tuple[str, ...] = ()
    image_pool: tuple[str, ...] = ()
    scoring: str = "build"
    version_probe: str = ""
    entry_candidates: tuple[str, ...] = ()
    entry_template: str = ""
    run_prefixes: tuple[str, ...] = ()
    import_template: str = ""
    prompt_role: str = ""
    workflow: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.verify_commands or not all(c.strip() for c in self.verify_commands):
            raise ValueError(f"plugin {self.language!r} needs non-empty verify commands")

    def resolve_verify_commands(self, repo: Repository) -> tuple[str, ...]:
        for variant in self.verify_variants:
            if repo.has(variant.when):
                return variant.commands
        return self.verify_commands

    def render_install(self, manifest_path: str = "", mirror: str = "", workdir: str = "/repo") -> list[str]:
        out = []
        for template in self.install_templates:
            if "{mirror}" in template and not mirror:
                # drop the flag that introduces the mirror along with the placeholder
                template = re.sub(r"\s+-{1,2}[\w-]+[ =]\{mirror\}", "", template).replace("{mirror}", "")
            if "{manifest-path}" in template and not manifest_path:
                continue
            out.append(template.replace("{mirror}", mirror).replace("{manifest-path}", manifest_path)
                       .replace("{workdir}", workdir))
        return out

    def render_mirror_steps(self, mirrors: dict[str, str]) -> list[str]:
        url = mirrors.get(self.ecosystem)
        return [t.replace("{mirror}", url) for t in self.mirror_templates] if url else []

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LanguagePlugin":
        data = dict(data)
        data["runtime"] = RuntimeFamily(**data["runtime"])
        data["verify_variants"] = tuple(
            VerifyVariant(v["when"], tuple(v["commands"])) for v in data.get("verify_variants", ())
        )
        for key, value in list(data.items()):
            if isinstance(value, list):
                data[key] = tuple(value)
        return cls(**data)


@dataclass(frozen=True)
class VerificationStep:
    command: str
    success_rule: str = "exit-zero"


@dataclass(frozen=True)
class VerificationSequence:
    steps: tuple[VerificationStep, ...]
    origin: str

    def __post_init__(self):
        if not self.steps or not all(s.command.strip() for s in self.steps):
            raise ValueError("verification sequence needs at least one non-empty step")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")

    @property
    def commands(self) -> list[str]:
        return [s.command for s in self.steps]


@dataclass
class PluginRegistry:
    plugins: dict[str, LanguagePlugin] = field(default_factory=dict)

    def register(self, plugin: LanguagePlugin) -> "PluginRegistry":
        if plugin.language in self.plugins:
            raise AlreadyRegistered(f"language {plugin.language!r} already registered")
        self.plugins[plugin.language] = plugin
        return self

    def lookup(self, language: str) -> LanguagePlugin:
        try:
            return self.plugins[language]
        except KeyError:
            raise UnsupportedLanguage(f"no plugin for language {language!r}") from None

    def __contains__(self, language: str) -> bool:
        return language in self.plugins

    def __iter__(self) -> Iterator[LanguagePlugin]:
        return iter(self.plugins[k] for k in sorted(self.plugins))

    def __len__(self) -> int:
        return len(self.plugins)

    def load_file(self, path: Path | str) -> "PluginRegistry":
        """Register plugins declared in a JSON file (a list of plugin objects)."""
        for entry in json.loads(Path(path).read_text(encoding="utf-8")):
            self.register(LanguagePlugin.from_dict(entry))
        return self


PYTHON_PLUGIN = LanguagePlugin(
    language=L.PYTHON,
    manifest_patterns=("setup.py", "setup.cfg", "pyproject.toml", "Pipfile", "requirements*.txt"),
    lockfile_patterns=("poetry.lock", "Pipfile.lock", "uv.lock"),
    runtime=RuntimeFamily("python", "3.10", "slim"),
    install_templates=(
        "pip install --no-cache-dir -r {manifest-path} -i {mirror}",
        "cd {workdir} && pip install --no-cache-dir -e . -i {mirror}",
    ),
    verify_commands=("python -m pytest",),
    test_runner="run-pytest",
    version_switch=True,
    ecosystem="pypi",
    mirror_templates=("pip config set global.index-url {mirror}",),
    runner_install=("pip install --no-cache-dir pytest",),
    image_pool=tuple(f"python:{v}{s}" for v in ("3.8", "3.9", "3.10", "3.11", "3.12") for s in ("", "-slim")),
    scoring="test-report",
    version_probe="python --version",
    entry_candidates=("main.py", "app.py", "cli.py", "run.py", "manage.py", "server.py", "__main__.py"),
    entry_template="python {entry} --help",
    run_prefixes=("python", "python3", "flask", "uvicorn", "streamlit"),
    import_template="python -c \"import {module}\"",
)

JAVA_PLUGIN = LanguagePlugin(
    language=L.JAVA,
    manifest_patterns=("pom.xml", "build.gradle", "build.gradle.kts"),
    lockfile_patterns=("gradle.lockfile",),
    runtime=RuntimeFamily("openjdk", "17"),
    install_templates=(
        "apt-get update && apt-get install -y --no-install-recommends maven",
        "cd {workdir} && mvn -B dependency:resolve",
    ),
    verify_commands=("mvn clean install",),
    test_runner=None,
    version_switch=True,
    verify_variants=(
        VerifyVariant("pom.xml", ("mvn clean install",)),
        VerifyVariant("gradlew", ("./gradlew clean build",)),
        VerifyVariant("build.gradle*", ("gradle clean build",)),
    ),
    ecosystem="maven",
    mirror_templates=(
        "mkdir -p /root/.m2 && printf '<settings><mirrors><mirror><id>m</id><mirrorOf>*</mirrorOf>"
        "<url>{mirror}</url></mirror></mirrors></settings>' > /root/.m2/settings.xml",
    ),
    image_pool=("openjdk:11", "openjdk:17", "openjdk:21", "eclipse-temurin:17", "eclipse-temurin:21",
                "maven:3.9-eclipse-temurin-17", "gradle:8-jdk17"),
    version_probe="java -version",
    entry_candidates=("src/main/java/Main.java", "Main.java"),
    run_prefixes=("java", "mvn", "gradle", "./gradlew"),
)

RUST_PLUGIN = LanguagePlugin(
    language=L.RUST,
    manifest_patterns=("Cargo.toml",),
    lockfile_patterns=("Cargo.lock",),
    runtime=RuntimeFamily("rust", "1.80", "slim"),
    install_templates=("cd {workdir} && cargo fetch",),
    verify_commands=("cargo build", "cargo test"),
    ecosystem="crates",
    mirror_templates=(
        "mkdir -p $CARGO_HOME && printf '[source.crates-io]\\nreplace-with = \"m\"\\n[source.m]\\n"
        "registry = \"sparse+{mirror}\"\\n' > $CARGO_HOME/config.toml",
    ),
    image_pool=("rust:1.75", "rust:1.75-slim", "rust:1.80", "rust:1.80-slim", "rust:latest"),
    version_probe="rustc --version",
    entry_candidates=("src/main.rs",),
    run_prefixes=("cargo",),
)

JS_TS_PLUGIN = LanguagePlugin(
    language=L.JS_TS,
    manifest_patterns=("package.json",),
    lockfile_patterns=("package-lock.json", "yarn.lock", "pnpm-lock.yaml"),
    runtime=RuntimeFamily("node", "20", "slim"),
    install_templates=("cd {workdir} && npm install --registry {mirror}",),
    verify_commands=("npm install",),
    verify_variants=(VerifyVariant("yarn.lock", ("yarn install",)),),
    ecosystem="npm",
    mirror_templates=("npm config set registry {mirror}",),
    image_pool=("node:18", "node:18-slim", "node:20", "node:20-slim", "node:22", "node:22-slim"),
    version_probe="node --version",
    entry_candidates=("index.js", "server.js", "app.js", "src/index.ts", "src/index.js", "main.js"),
    entry_template="node {entry}",
    run_prefixes=("node", "npm", "npx", "yarn"),
)

GO_PLUGIN = LanguagePlugin(
    language=L.GO,
    manifest_patterns=("go.mod",),
    lockfile_patterns=("go.sum",),
    runtime=RuntimeFamily("golang", "1.22"),
    install_templates=("cd {workdir} && go mod download",),
    verify_commands=("go build ./...", "go test ./..."),
    ecosystem="goproxy",
    mirror_templates=("go env -w GOPROXY={mirror},direct",),
    image_pool=("golang:1.21", "golang:1.22", "golang:1.22-alpine", "golang:1.23"),
    version_probe="go version",
    entry_candidates=("main.go", "cmd/main.go"),
    entry_template="go run {entry} --help",
    run_prefixes=("go",),
    prompt_role="You are an engineer who specializes in configuring Go build environments.",
    workflow=(
        "Explore the repository layout and the container image you are running in.",
        "Read the documentation shipped with the repository (README, CONTRIBUTING, docs/).",
        "Inspect go.mod, go.sum and any .go-version file; note the required Go version.",
        "Check whether the project is a multi-module workspace (several go.mod files).",
        "Build the project with the verification commands; analyze and fix any failure.",
        "When the build and tests succeed, call stop.",
    ),
)

SHIPPED_PLUGINS = (PYTHON_PLUGIN, JAVA_PLUGIN, RUST_PLUGIN, JS_TS_PLUGIN, GO_PLUGIN)


def default_registry() -> PluginRegistry:
    registry = PluginRegistry()
    for plugin in SHIPPED_PLUGINS:
        registry.register(plugin)
    return registry


def derive_verification_sequence(
    repo: Repository,
    plugin: LanguagePlugin,
    artifacts: list[ConfigArtifact] | None = None,
    ci_extractor: Callable[[Repository], list[str]] | None = None,
) -> VerificationSequence:
    dominant = dominant_language(repo).dominant
    if dominant != plugin.language:
        raise PluginMismatch(f"plugin {plugin.language!r} does not match dominant language {dominant!r}")
    artifacts = detect_artifacts(repo) if artifacts is None else artifacts
    has_tests = any(a.kind == "test-script" and a.language in (None, plugin.language) for a in artifacts)
    if has_tests and plugin.test_runner:
        return VerificationSequence((VerificationStep(plugin.test_runner, "test-report"),), "plugin-default")
    if any(a.kind == "ci-pipeline" for a in artifacts):
        if ci_extractor is None:
            from .tools.cicd import ci_commands as ci_extractor
        commands = ci_extractor(repo)
        if commands:
            return VerificationSequence(tuple(VerificationStep(c) for c in commands), "ci-derived")
    commands = plugin.resolve_verify_commands(repo)
    return VerificationSequence(tuple(VerificationStep(c) for c in commands), "plugin-default")


def matches_verify_command(command: str, plugin: LanguagePlugin, repo: Repository | None = None) -> bool:
    """True if a shell command is one of the plugin's verify commands (ignoring a leading cd)."""
    cmd = " ".join(command.split())
    for prefix in ("cd /repo && ", "cd /repo; "):
        if cmd.startswith(prefix):
            cmd = cmd[len(prefix):]
    candidates = set(plugin.verify_commands)
    for v in plugin.verify_variants:
        candidates.update(v.commands)
    return any(cmd == c or cmd.startswith(c + " ") for c in candidates) or any(
        fnmatch(cmd, c) for c in candidates if "*" in c
    )
