"""Container recipe plans and their rendering to build-file text."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

INSTRUCTIONS = {
    "ADD", "ARG", "CMD", "COPY", "ENTRYPOINT", "ENV", "EXPOSE", "FROM", "HEALTHCHECK", "LABEL",
    "ONBUILD", "RUN", "SHELL", "STOPSIGNAL", "USER", "VOLUME", "WORKDIR",
}


@dataclass(frozen=True)
class RecipePlan:
    base_image: str
    runtime_install_steps: tuple[str, ...] = ()
    mirror_config_steps: tuple[str, ...] = ()
    toolset_injection_steps: tuple[str, ...] = ()
    workdir: str = "/repo"
    labels: dict[str, str] = field(default_factory=dict)
    copy_source: bool = False
    setup_steps: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.base_image.strip():
            raise ValueError("base image must be non-empty")

    def to_dict(self) -> dict:
        return {
            "base_image": self.base_image,
            "runtime_install_steps": list(self.runtime_install_steps),
            "mirror_config_steps": list(self.mirror_config_steps),
            "toolset_injection_steps": list(self.toolset_injection_steps),
            "workdir": self.workdir,
            "labels": dict(sorted(self.labels.items())),
            "copy_source": self.copy_source,
            "setup_steps": list(self.setup_steps),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RecipePlan":
        data = dict(data)
        for key in ("runtime_install_steps", "mirror_config_steps", "toolset_injection_steps", "setup_steps"):
            data[key] = tuple(data.get(key, ()))
        return cls(**data)


def _section(title: str, steps: tuple[str, ...]) -> list[str]:
    if not steps:
        return []
    return ["", f"# {title}"] + [f"RUN {s}" for s in steps]


def render_recipe(plan: RecipePlan) -> str:
    lines = [f"FROM {plan.base_image}"]
    for key, value in sorted(plan.labels.items()):
        lines.append(f"LABEL {key}={json.dumps(value)}")
    lines += ["", "ENV DEBIAN_FRONTEND=noninteractive PIP_DISABLE_PIP_VERSION_CHECK=1"]
    lines += _section("mirror configuration", plan.mirror_config_steps)
    lines += _section("runtime installation", plan.runtime_install_steps)
    lines += _section("toolset injection", plan.toolset_injection_steps)
    lines += ["", f"WORKDIR {plan.workdir}"]
    if plan.copy_source:
        lines.append(f"COPY . {plan.workdir}")
    lines += _section("repository setup", plan.setup_steps)
    return "\n".join(lines) + "\n"


def parse_recipe(text: str) -> list[tuple[str, str]]:
    """Split build-file text into ``(INSTRUCTION, arguments)`` pairs.

    Raises ValueError on unknown instructions or a missing leading FROM.
    """
    out: list[tuple[str, str]] = []
    pending = ""
    for raw in text.splitlines():
        line = raw.strip()
        if not pending and (not line or line.startswith("#")):
            continue
        if line.endswith("\\"):
            pending += line[:-1].rstrip() + " "
            continue
        line = pending + line
        pending = ""
        head, _, rest = line.partition(" ")
        word = head.upper()
        if word not in INSTRUCTIONS:
            raise ValueError(f"unknown instruction {head!r}")
        out.append((word, rest.strip()))
    if pending:
        raise ValueError("dangling line continuation")
    first = next((w for w, _ in out if w != "ARG"), None)
    if first != "FROM":
        raise ValueError("recipe must start with FROM")
    return out


def recipe_base_image(text: str) -> str:
    for word, args in parse_recipe(text):
        if word == "FROM":
            parts = [p for p in args.split() if not p.startswith("--")]
            return parts[0]
    raise ValueError("no FROM instruction")
