from __future__ import annotations

import shutil
import sys
from pathlib import Path

import pytest

from envforge.clock import FrozenClock
from envforge.sandbox import LocalEngine, create_sandbox

HERE = Path(__file__).resolve().parent
FIXTURES = HERE / "fixtures"
REPOS = FIXTURES / "repos"
REPLAY = FIXTURES / "replay"
ROOT = HERE.parent

sys.path.insert(0, str(ROOT / "scripts"))


@pytest.fixture
def copy_repo(tmp_path):
    """Copy a bundled fixture repository into a scratch directory."""

    copies = []

    def _copy(name: str) -> Path:
        # each copy gets its own parent so the directory name (the repo id) stays the same
        dest = tmp_path / f"repos{len(copies)}" / name
        shutil.copytree(REPOS / name, dest)
        copies.append(dest)
        return dest

    return _copy


@pytest.fixture
def engine(tmp_path):
    return LocalEngine(tmp_path / "engine")


@pytest.fixture
def make_sandbox(engine, tmp_path):
    boxes = []

    def _make(workspace: Path | None = None, global_timeout: float = 7200.0, image: str = "python:3.10-slim"):
        ws = workspace or (tmp_path / "ws")
        ws.mkdir(parents=True, exist_ok=True)
        box = create_sandbox(image, engine, ws, global_timeout, clock=FrozenClock())
        boxes.append(box)
        return box

    yield _make
    for box in boxes:
        box.destroy()


# -- acceptance reporting ---------------------------------------------------------

_criteria: dict[str, tuple[str, str]] = {}
_RANK = {"PASS": 0, "SKIP": 1, "FAIL": 2}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or (call.when != "call" and call.excinfo is None):
        return
    name = mark.args[0]
    if call.excinfo is None:
        verdict = ("PASS", "")
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        verdict = ("SKIP", str(call.excinfo.value.msg))
    else:
        verdict = ("FAIL", call.excinfo.exconly().splitlines()[0][:160])
    # a criterion split over several tests reports its worst part
    prev = _criteria.get(name)
    if prev is None or _RANK[verdict[0]] > _RANK[prev[0]]:
        _criteria[name] = verdict
    elif verdict[0] == prev[0] == "SKIP" and verdict[1] not in prev[1]:
        _criteria[name] = ("SKIP", f"{prev[1]}; {verdict[1]}")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, why) in sorted(_criteria.items()):
        terminalreporter.write_line(f"{status:<4}  {name}" + (f"  ({why})" if why else ""))
