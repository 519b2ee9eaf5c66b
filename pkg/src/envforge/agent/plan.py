"""Plan-file state for the automated mode."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

PHASES = ("Repository Analysis", "Dependency Installation", "Environment Configuration", "Testing & Validation")
STATUSES = ("pending", "in_progress", "complete")
PLAN_FILE = "plan.md"
_PHASE = re.compile(r"^#{2,4}\s*Phase\s+(\d+)\s*:\s*(.+?)\s*$", re.M)
_ITEM = re.compile(r"^\s*[-*]\s*\[([ xX])\]\s*(.+?)\s*$", re.M)
_STATUS = re.compile(r"\*\*Status\*\*\s*:\s*`?([\w-]+)`?", re.I)


class PlanError(ValueError):
    pass


@dataclass
class Phase:
    number: int
    name: str
    status: str
    items: list[tuple[bool, str]] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return self.status == "complete"


@dataclass
class PlanState:
    phases: list[Phase]

    @property
    def current(self) -> Phase | None:
        """First phase that is not complete."""
        return next((p for p in self.phases if not p.complete), None)

    @property
    def done(self) -> bool:
        return self.current is None


def parse_plan(text: str) -> PlanState:
    heads = list(_PHASE.finditer(text))
    if len(heads) != len(PHASES):
        raise PlanError(f"expected {len(PHASES)} phases, found {len(heads)}")
    phases = []
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        body = text[m.end():end]
        # stop at the next level-2 section (e.g. "## Current Phase")
        cut = re.search(r"^##\s+(?!#)", body, re.M)
        body = body[:cut.start()] if cut else body
        status = _STATUS.search(body)
        if status is None:
            raise PlanError(f"phase {m.group(1)} has no status line")
        value = status.group(1).lower().replace("-", "_")
        if value not in STATUSES:
            raise PlanError(f"phase {m.group(1)} has unknown status {value!r}")
        items = [(box.lower() == "x", label) for box, label in _ITEM.findall(body)]
        phases.append(Phase(int(m.group(1)), m.group(2), value, items))
    if [p.number for p in phases] != list(range(1, len(PHASES) + 1)):
        raise PlanError("phases must be numbered 1 to 4 in order")
    return PlanState(phases)


@dataclass
class AutomatedState:
    """Automated-mode bookkeeping carried between turns."""

    workspace: Path
    plan: PlanState | None = None
    corrupt_reads: int = 0
    failed: bool = False

    @property
    def plan_path(self) -> Path:
        return Path(self.workspace) / PLAN_FILE


def run_automated_mode_step(state: AutomatedState) -> str:
    """Read the plan file, update ``state`` and return guidance for the next turn.

    The first unparseable read asks the agent to rewrite the plan; a second
    one marks the state failed.
    """
    path = state.plan_path
    if not path.exists():
        state.plan = None
        return "plan.md does not exist yet. Explore briefly, then create it from the skeleton with edit-file."
    try:
        state.plan = parse_plan(path.read_text(encoding="utf-8", errors="replace"))
    except PlanError as exc:
        state.corrupt_reads += 1
        if state.corrupt_reads >= 2:
            state.failed = True
            return f"plan.md is still unreadable ({exc})."
        return (f"plan.md could not be read ({exc}). Recreate it from the skeleton: remove the file and "
                "insert the skeleton again with edit-file, then continue.")
    current = state.plan.current
    if current is None:
        return "All phases in plan.md are complete. Confirm the checks pass, then stop."
    open_items = [label for checked, label in current.items if not checked]
    hint = f"Current phase: Phase {current.number} ({current.name}), status {current.status}."
    if current.status == "pending":
        hint += " Mark it in_progress before you start."
    if open_items:
        hint += " Open items: " + "; ".join(open_items[:6]) + "."
    return hint
