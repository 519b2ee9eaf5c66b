"""Base-image selection: requirement inference, candidate pools, registry
search and scored selection."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol

from .errors import EnvForgeError, LLMUnavailable, NoCandidates, SpecParseFailure, UnsupportedLanguage
from .llm import BudgetLedger, LLMClient
from .plugins import PluginRegistry
from .repo import ConfigArtifact, Repository, dominant_language, read_text

log = logging.getLogger(__name__)

CLAMP_PENALTY = 0.2
REGISTRY_LIMIT = 10
MAX_QUERIES = 3
CONFIG_EXCERPT_CHARS = 3000
README_EXCERPT_CHARS = 6000
SOURCES = ("default-pool", "registry-search")


@dataclass(frozen=True)
class LanguageVersions:
    image: str
    versions: tuple[str, ...]
    default_version: str
    variants: tuple[str, ...]
    default_variant: str

    def __post_init__(self):
        if self.default_version not in self.versions:
            raise ValueError(f"default version {self.default_version!r} not in {self.versions}")
        if self.default_variant not in self.variants:
            raise ValueError(f"default variant {self.default_variant!r} not in {self.variants}")


@dataclass(frozen=True)
class AllowedVersions:
    languages: dict[str, LanguageVersions]

    def __getitem__(self, language: str) -> LanguageVersions:
        try:
            return self.languages[language]
        except KeyError:
            raise UnsupportedLanguage(f"no allowed versions for {language!r}") from None

    def to_dict(self) -> dict:
        return {
            lang: {
                "image": v.image,
                "versions": list(v.versions),
                "default_version": v.default_version,
                "variants": list(v.variants),
                "default_variant": v.default_variant,
            }
            for lang, v in sorted(self.languages.items())
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AllowedVersions":
        return cls({
            lang: LanguageVersions(v["image"], tuple(str(x) for x in v["versions"]), str(v["default_version"]),
                                   tuple(v["variants"]), v["default_variant"])
            for lang, v in data.items()
        })

    @classmethod
    def load(cls, path: Path | str | None = None) -> "AllowedVersions":
        if path is None:
            text = resources.files("envforge.data").joinpath("allowed_versions.json").read_text("utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def compose_image(base: str, version: str, variant: str) -> str:
    return f"{base}:{version}-{variant}" if variant else f"{base}:{version}"


@dataclass(frozen=True)
class ImageSpec:
    language: str
    version: str
    variant: str
    base_image: str
    full_image: str
    reason: str = ""
    confidence: float = 0.0
    frameworks: tuple[str, ...] = ()
    dependencies: tuple[str, ...] = ()
    search_hub: bool = False
    clamped: bool = False


@dataclass(frozen=True)
class ImageCandidate:
    reference: str
    source: str = "default-pool"
    score: float | None = None
    pull_estimate: str | None = None
    description: str = ""

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown candidate source {self.source!r}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class RegistryRow:
    name: str
    tag: str = "latest"
    description: str = ""
    stars: int = 0


class RegistryClient(Protocol):
    def search(self, query: str) -> list[RegistryRow]: ...


class DockerHubClient:
    """Public image-registry search over HTTP."""

    url = "https://hub.docker.com/v2/search/repositories/"

    def __init__(self, timeout: float = 15.0, page_size: int = 10):
        self.timeout = timeout
        self.page_size = page_size

    def search(self, query: str) -> list[RegistryRow]:
        import httpx

        resp = httpx.get(self.url, params={"query": query, "page_size": self.page_size}, timeout=self.timeout)
        resp.raise_for_status()
        rows = []
        for item in resp.json().get("results", []):
            name = item.get("repo_name") or item.get("name")
            if name:
                rows.append(RegistryRow(name, "latest", item.get("short_description") or "",
                                        int(item.get("star_count") or 0)))
        return rows


class FixtureRegistryClient:
    """Registry client backed by canned rows keyed by query (``"*"`` matches any)."""

    def __init__(self, rows: dict[str, list[RegistryRow]] | list[RegistryRow], fail: bool = False):
        self.rows = rows if isinstance(rows, dict) else {"*": list(rows)}
        self.fail = fail
        self.queries: list[str] = []

    def search(self, query: str) -> list[RegistryRow]:
        self.queries.append(query)
        if self.fail:
            raise ConnectionError("registry unreachable")
        return list(self.rows.get(query, self.rows.get("*", [])))


# --------------------------------------------------------------------------- prompts

ANALYSIS_PROMPT = """You choose container base images for software repositories. Work out the best base image for the repository described below.

## Permitted images and versions
```json
{allowed}
```

## Configuration files
{configs}

## README
{readme}

## What to decide
1. The repository's primary language (already detected as `{language}`).
2. Which language version the project needs, judged from manifests, CI files and documentation.
3. The image: take language, version and variant from the permitted list. When the project pins a version that is not listed, choose the nearest listed one. When nothing is pinned, use default_version. Use default_variant unless the project clearly needs another variant.
4. Optionally, notable frameworks and dependencies.
5. Whether the default images are likely insufficient so that the public registry should be searched for a specialized image (search_hub).

## Reply with a single JSON object and nothing else
{{"language": "...", "version": "...", "variant": "...", "base_image": "...", "full_image": "...", "reason": "...", "confidence": 0.0, "frameworks": [], "dependencies": [], "search_hub": false}}
"""

QUERY_PROMPT = """Suggest up to {n} search queries for the public container image registry that would find a specialized base image for this project.

Language: {language} {version}
Frameworks: {frameworks}
Key dependencies: {dependencies}
Reason for the initial choice: {reason}

Reply with a JSON array of query strings and nothing else."""

SCORE_PROMPT = """Rate how suitable each candidate base image is for the project below, on a scale from 0.0 (unusable) to 1.0 (ideal).

Project requirements:
- language: {language}
- version: {version}
- variant: {variant}
- frameworks: {frameworks}
- dependencies: {dependencies}

Candidates:
{candidates}

Reply with a JSON array of objects {{"reference": "...", "score": 0.0}} covering every candidate, and nothing else."""

REPROMPT = "Your previous reply could not be parsed ({error}). Reply again with valid JSON only, no prose and no code fences."


def _extract_json(text: str, opener: str):
    """Parse the first JSON value starting with ``opener``; floats are kept as strings."""
    text = text.strip()
    fence = re.search(r"```(?:json)?\s*(.*?)```", text, re.S)
    if fence:
        text = fence.group(1).strip()
    start = text.find(opener)
    if start < 0:
        raise ValueError(f"no JSON {'object' if opener == '{' else 'array'} found")
    value, _ = json.JSONDecoder(parse_float=str).raw_decode(text[start:])
    return value


def _ask_json(llm: LLMClient, ledger: BudgetLedger, prompt: str, opener: str):
    messages = [{"role": "user", "content": prompt}]
    reply = llm.complete(messages, ledger).reply
    try:
        return _extract_json(reply, opener)
    except ValueError as exc:
        messages += [{"role": "assistant", "content": reply},
                     {"role": "user", "content": REPROMPT.format(error=exc)}]
        reply = llm.complete(messages, ledger).reply
        return _extract_json(reply, opener)


def _config_excerpts(repo: Repository, artifacts: list[ConfigArtifact]) -> str:
    parts = []
    for a in artifacts:
        if a.kind in ("build-manifest", "lockfile", "dockerfile", "ci-pipeline") and a.path.count("/") <= 2:
            try:
                body = read_text(repo, a.path)
            except EnvForgeError:
                continue
            if a.kind == "lockfile":
                body = body[:600]
            parts.append(f"### {a.path}\n```\n{body[:CONFIG_EXCERPT_CHARS]}\n```")
    return "\n\n".join(parts) if parts else "(none found)"


def _readme(repo: Repository, artifacts: list[ConfigArtifact]) -> str:
    readmes = sorted((a.path for a in artifacts if a.kind == "readme"), key=lambda p: (p.count("/"), p))
    if not readmes:
        return "(none found)"
    try:
        return read_text(repo, readmes[0])[:README_EXCERPT_CHARS]
    except EnvForgeError:
        return "(none found)"


def _as_list(value) -> tuple[str, ...]:
    if isinstance(value, list):
        return tuple(str(v) for v in value)
    if isinstance(value, str) and value:
        return (value,)
    return ()


def analyze_requirements(repo: Repository, artifacts: list[ConfigArtifact], llm: LLMClient | None,
                         ledger: BudgetLedger, allowed: AllowedVersions, language: str | None = None) -> ImageSpec:
    if llm is None:
        raise LLMUnavailable("image analysis needs a completion handle")
    language = language or dominant_language(repo).dominant
    versions = allowed[language]
    prompt = ANALYSIS_PROMPT.format(
        allowed=json.dumps({language: allowed.to_dict()[language]}, indent=2, ensure_ascii=False),
        configs=_config_excerpts(repo, artifacts),
        readme=_readme(repo, artifacts),
        language=language,
    )
    try:
        reply = _ask_json(llm, ledger, prompt, "{")
    except ValueError as exc:
        raise SpecParseFailure(f"image analysis reply is not JSON: {exc}") from None
    if not isinstance(reply, dict):
        raise SpecParseFailure("image analysis reply is not a JSON object")
    return spec_from_reply(reply, language, versions)


def spec_from_reply(reply: dict, language: str, versions: LanguageVersions) -> ImageSpec:
    """Clamp a parsed reply into the permitted versions and variants."""
    version = str(reply.get("version") or "")
    variant = str(reply.get("variant") if reply.get("variant") is not None else versions.default_variant)
    clamped = False
    if version not in versions.versions:
        version, clamped = versions.default_version, True
    if variant not in versions.variants:
        variant, clamped = versions.default_variant, True
    try:
        confidence = float(reply.get("confidence") or 0.0)
    except (TypeError, ValueError):
        confidence = 0.0
    confidence = min(1.0, max(0.0, confidence))
    if clamped:
        confidence = max(0.0, round(confidence - CLAMP_PENALTY, 10))
    search_hub = reply.get("search_hub", False)
    return ImageSpec(
        language=language,
        version=version,
        variant=variant,
        base_image=versions.image,
        full_image=compose_image(versions.image, version, variant),
        reason=str(reply.get("reason") or ""),
        confidence=confidence,
        frameworks=_as_list(reply.get("frameworks")),
        dependencies=_as_list(reply.get("dependencies")),
        search_hub=search_hub is True or str(search_hub).lower() == "true",
        clamped=clamped,
    )


def default_pool_candidates(spec: ImageSpec, plugins: PluginRegistry) -> list[ImageCandidate]:
    try:
        pool = plugins.lookup(spec.language).image_pool
    except UnsupportedLanguage:
        return []
    refs = sorted(set(pool) | {spec.full_image}) if spec.full_image.split(":")[0] in {
        p.split(":")[0] for p in pool} else sorted(set(pool))
    tag_version = spec.full_image.split(":", 1)[-1]

    def rank(ref: str):
        tag = ref.split(":", 1)[-1]
        if ref == spec.full_image:
            return (0, ref)
        if tag.split("-")[0] == tag_version.split("-")[0]:
            return (1, ref)
        return (2, ref)

    return [ImageCandidate(ref, "default-pool") for ref in sorted(refs, key=rank)]


def search_registry(spec: ImageSpec, llm: LLMClient, ledger: BudgetLedger, registry: RegistryClient | None,
                    limit: int = REGISTRY_LIMIT,
                    on_warning: Callable[[str], None] | None = None) -> list[ImageCandidate]:
    def warn(msg: str) -> None:
        log.warning(msg)
        if on_warning:
            on_warning(msg)

    if registry is None:
        warn("no registry client configured; skipping registry search")
        return []
    prompt = QUERY_PROMPT.format(n=MAX_QUERIES, language=spec.language, version=spec.version,
                                 frameworks=", ".join(spec.frameworks) or "-",
                                 dependencies=", ".join(spec.dependencies) or "-", reason=spec.reason or "-")
    try:
        queries = [str(q) for q in _ask_json(llm, ledger, prompt, "[") if str(q).strip()][:MAX_QUERIES]
    except ValueError:
        queries = [" ".join((spec.language,) + spec.frameworks[:2])]
    out: dict[str, ImageCandidate] = {}
    for query in queries:
        try:
            rows = registry.search(query)
        except Exception as exc:  # registry failures degrade, never abort
            warn(f"registry search for {query!r} failed: {exc}")
            continue
        for row in rows:
            ref = f"{row.name}:{row.tag}" if row.tag else row.name
            if ref not in out and len(out) < limit:
                out[ref] = ImageCandidate(ref, "registry-search", None, f"{row.stars} stars", row.description)
    return list(out.values())


def _normalized(candidates: list[ImageCandidate]) -> list[ImageCandidate]:
    seen: dict[str, ImageCandidate] = {}
    for c in sorted(candidates, key=lambda c: (SOURCES.index(c.source), c.reference)):
        seen.setdefault(c.reference, c)
    return list(seen.values())


def _selection_key(c: ImageCandidate):
    return (-(c.score or 0.0), SOURCES.index(c.source), c.reference)


def score_candidates(spec: ImageSpec, candidates: list[ImageCandidate], llm: LLMClient,
                     ledger: BudgetLedger) -> tuple[list[ImageCandidate], bool]:
    """Ask the model to score candidates; return them best first and whether scoring worked.

    When the reply cannot be parsed the candidates come back unscored with
    the default pool first.
    """
    if not candidates:
        raise NoCandidates("no base-image candidates to score")
    ordered = _normalized(candidates)
    listing = "\n".join(
        f"- {c.reference} (source: {c.source}{'; ' + c.description if c.description else ''})" for c in ordered
    )
    prompt = SCORE_PROMPT.format(language=spec.language, version=spec.version, variant=spec.variant or "-",
                                 frameworks=", ".join(spec.frameworks) or "-",
                                 dependencies=", ".join(spec.dependencies) or "-", candidates=listing)
    try:
        reply = _ask_json(llm, ledger, prompt, "[")
        scores = parse_scores(reply)
    except ValueError:
        log.warning("candidate scores could not be parsed; falling back to the default pool")
        return sorted(ordered, key=lambda c: (c.reference != spec.full_image, SOURCES.index(c.source))), False
    scored = [replace(c, score=scores.get(c.reference, 0.0)) for c in ordered]
    return sorted(scored, key=_selection_key), True


def score_and_select(spec: ImageSpec, candidates: list[ImageCandidate], llm: LLMClient,
                     ledger: BudgetLedger) -> ImageCandidate:
    ranked, _ = score_candidates(spec, candidates, llm, ledger)
    return ranked[0]


def parse_scores(reply) -> dict[str, float]:
    if not isinstance(reply, list):
        raise ValueError("scores must be a JSON array")
    scores = {}
    for item in reply:
        if not isinstance(item, dict) or "reference" not in item:
            raise ValueError("score entries need a reference")
        try:
            value = float(item.get("score"))
        except (TypeError, ValueError):
            raise ValueError(f"bad score for {item.get('reference')!r}") from None
        if value != value:  # NaN
            raise ValueError("score is NaN")
        scores[str(item["reference"])] = min(1.0, max(0.0, value))
    return scores


def select_best(scored: list[ImageCandidate]) -> ImageCandidate:
    """Maximum score; ties go to the default pool, then the smaller reference."""
    if not scored:
        raise NoCandidates("no candidates")
    return min(_normalized(scored), key=_selection_key)


@dataclass
class ImageSelection:
    spec: ImageSpec
    selected: ImageCandidate
    candidates: list[ImageCandidate] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def select_base_image(repo: Repository, artifacts: list[ConfigArtifact], llm: LLMClient, ledger: BudgetLedger,
                      allowed: AllowedVersions, plugins: PluginRegistry,
                      registry: RegistryClient | None = None, language: str | None = None) -> ImageSelection:
    """Infer requirements, take the default pool, optionally search the registry and score."""
    spec = analyze_requirements(repo, artifacts, llm, ledger, allowed, language)
    pool = default_pool_candidates(spec, plugins)
    warnings: list[str] = []
    if spec.search_hub:
        hub = search_registry(spec, llm, ledger, registry, on_warning=warnings.append)
        candidates = pool + hub
        if not candidates:
            raise NoCandidates(f"no base-image candidates for {spec.language}")
        selected = score_and_select(spec, candidates, llm, ledger)
        return ImageSelection(spec, selected, candidates, warnings)
    if not pool:
        return ImageSelection(spec, ImageCandidate(spec.full_image, "default-pool"), [], warnings)
    return ImageSelection(spec, pool[0], pool, warnings)
