"""Setup-command extraction from CI workflow files."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import yaml

from ..errors import NoCI
from ..repo import Repository, detect_artifacts, read_text

log = logging.getLogger(__name__)

# Steps that only make sense on a hosted runner.
DENYLIST = (
    "actions/checkout",
    "actions/upload-artifact",
    "actions/download-artifact",
    "actions/cache",
    "codecov/codecov-action",
    "actions/github-script",
    "actions/labeler",
    "actions/stale",
    "peaceiris/actions-gh-pages",
    "softprops/action-gh-release",
    "docker/login-action",
)
_EXPR = re.compile(r"\$\{\{\s*matrix\.([\w-]+)\s*\}\}")
_ANY_EXPR = re.compile(r"\$\{\{.*?\}\}")


@dataclass
class CIExtraction:
    commands: list[str] = field(default_factory=list)
    pins: dict[str, str] = field(default_factory=dict)
    services: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    workflows: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"commands": self.commands, "pins": self.pins, "services": self.services,
                "skipped": self.skipped, "warnings": self.warnings, "workflows": self.workflows}

    def script(self) -> str:
        lines = ["#!/bin/sh", "set -e"]
        lines += [f"# {k}={v}" for k, v in self.pins.items()]
        lines += self.commands
        return "\n".join(lines) + "\n"


def _first_matrix(job: dict) -> dict:
    matrix = ((job.get("strategy") or {}).get("matrix")) or {}
    if not isinstance(matrix, dict):
        return {}
    choice = {}
    for key, value in matrix.items():
        if key in ("include", "exclude"):
            continue
        if isinstance(value, list) and value:
            choice[key] = value[0]
        elif not isinstance(value, list):
            choice[key] = value
    if not choice and isinstance(matrix.get("include"), list) and matrix["include"]:
        first = matrix["include"][0]
        if isinstance(first, dict):
            choice.update(first)
    return choice


def _resolve(text: str, matrix: dict) -> str:
    return _EXPR.sub(lambda m: str(matrix.get(m.group(1), m.group(0))), text)


def _clean(command: str) -> list[str]:
    out = []
    for line in re.sub(r"[ \t]*\\\n\s*", " ", command).splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        line = re.sub(r"^sudo\s+(-E\s+)?", "", line)
        line = re.sub(r"(&&|;|\|\|)\s*sudo\s+(-E\s+)?", r"\1 ", line)
        out.append(line)
    return out


def extract_workflow(text: str, name: str = "") -> CIExtraction:
    """Run steps in job order with setup-action version pins; matrix values take their first entry."""
    out = CIExtraction(workflows=[name] if name else [])
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        out.warnings.append(f"{name or 'workflow'}: malformed YAML ({str(exc).splitlines()[0]})")
        return out
    if not isinstance(doc, dict) or not isinstance(doc.get("jobs"), dict):
        out.warnings.append(f"{name or 'workflow'}: no jobs")
        return out
    for job_name, job in doc["jobs"].items():
        if not isinstance(job, dict):
            continue
        matrix = _first_matrix(job)
        for svc, spec in (job.get("services") or {}).items():
            image = spec.get("image") if isinstance(spec, dict) else spec
            out.services.append(f"{svc}={_resolve(str(image), matrix)}")
        for step in job.get("steps") or []:
            if not isinstance(step, dict):
                continue
            uses = str(step.get("uses", ""))
            if uses:
                action = uses.split("@")[0]
                if any(action == d or action.startswith(d + "/") for d in DENYLIST):
                    out.skipped.append(uses)
                    continue
                for key, value in (step.get("with") or {}).items():
                    if key.endswith("-version") and value is not None:
                        pin = _resolve(str(value), matrix)
                        if not _ANY_EXPR.search(pin):
                            out.pins.setdefault(key, pin)
                if "run" not in step:
                    continue
            if "run" in step:
                body = _resolve(str(step["run"]), matrix)
                for line in _clean(body):
                    if _ANY_EXPR.search(line):
                        out.skipped.append(line)
                    else:
                        out.commands.append(line)
    return out


def extract_ci(repo: Repository) -> CIExtraction:
    workflows = [a.path for a in detect_artifacts(repo) if a.kind == "ci-pipeline"]
    if not workflows:
        raise NoCI("no CI workflow files found")
    merged = CIExtraction()
    parsed = 0
    for path in workflows:
        part = extract_workflow(read_text(repo, path), path)
        parsed += not any("malformed" in w for w in part.warnings)
        merged.workflows.append(path)
        for c in part.commands:
            if c not in merged.commands:
                merged.commands.append(c)
        for k, v in part.pins.items():
            merged.pins.setdefault(k, v)
        merged.services.extend(s for s in part.services if s not in merged.services)
        merged.skipped.extend(part.skipped)
        merged.warnings.extend(part.warnings)
    if not parsed:
        raise NoCI("no readable CI workflow: " + "; ".join(merged.warnings), warnings=merged.warnings)
    return merged


def ci_commands(repo: Repository) -> list[str]:
    try:
        return extract_ci(repo).commands
    except NoCI:
        return []


__all__ = ["DENYLIST", "CIExtraction", "ci_commands", "extract_ci", "extract_workflow"]
