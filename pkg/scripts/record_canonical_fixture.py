"""Record the replay fixtures used by the test suite.

Runs the real pipeline against the bundled fixture repositories with scripted
model replies and the host-process engine, capturing every exchange.

    python3 scripts/record_canonical_fixture.py [--out tests/fixtures/replay]
"""

from __future__ import annotations

import argparse
import json
import tempfile
from pathlib import Path

from envforge import canonical
from envforge.config import RunConfig
from envforge.llm import LLMClient, ReplayEntry, ScriptedBackend, estimate_tokens, load_fixture, save_fixture
from envforge.pipeline import configure

ROOT = Path(__file__).resolve().parents[1]
REPOS = ROOT / "tests" / "fixtures" / "repos"

IMAGE_REPLY = json.dumps({
    "language": "python", "version": "3.10", "variant": "slim", "base_image": "python",
    "full_image": "python:3.10-slim", "reason": "no version pin; plain library with a pytest suite",
    "confidence": 0.8, "frameworks": [], "dependencies": ["pytest"], "search_hub": False,
})


def turn(thought: str, command: str) -> str:
    return f"### Thought: {thought}\n### Action:\n```bash\n{command}\n```"


CANONICAL_REPLIES = [
    IMAGE_REPLY,
    turn("Start with the layout of the repository.", "ls-structure --repo /repo --depth 2"),
    turn("The README should say how the tests are run.", "read-file /repo/README.md"),
    turn("Check that the module imports from the repository root.",
         'python -c "import minipkg; print(minipkg.add(1, 2))"'),
    turn("Make sure pytest can collect the suite.", "run-pytest-collect"),
    turn("Run the whole suite.", "run-pytest"),
    turn("Both tests pass, so the environment is ready.", "stop"),
    "```dockerfile\n"
    "FROM python:3.10-slim\n"
    "ENV PIP_DISABLE_PIP_VERSION_CHECK=1\n"
    "RUN pip install --no-cache-dir pytest\n"
    "WORKDIR /repo\n"
    "COPY . /repo\n"
    "```",
]

# a package without tests: the smoke check from its README is the verification
SMOKE_REPLIES = [
    IMAGE_REPLY,
    turn("There are no tests; find something runnable.", "construct-test /repo"),
    turn("The README shows an import check, run it.", "run-test run"),
    turn("The import check passes.", "stop"),
]  # nothing was installed, so the initial recipe is kept and no finalize reply is needed

BUDGET_REPLIES = [
    IMAGE_REPLY,
    turn("Look at the layout first.", "ls-structure --repo /repo --depth 2"),
    turn("Read the README.", "read-file /repo/README.md"),
    turn("List the outline of the module.", "view-outline /repo/minipkg.py"),
]
# one more turn than the limit allows; appended to the fixture without being recorded
UNREACHED_REPLY = turn("Run the suite.", "run-pytest")


def replay_config(fixture: Path, output_dir: Path, **overrides) -> RunConfig:
    """The configuration the tests replay with; recording must match it exactly."""
    return RunConfig(engine="local", driver="replay", fixture=str(fixture), output_dir=str(output_dir),
                     registry_search=False, web_search=False, frozen_clock=True, **overrides)


def record(replies: list[str], fixture: Path, repo: Path, **overrides) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        config = replay_config(fixture, Path(tmp), **overrides).merged(driver="record")
        llm = LLMClient("record", ScriptedBackend(list(replies)), fixture=fixture, keep_messages=False)
        out = configure(str(repo), config, llm=llm)
        print(f"{fixture.name}: outcome {out.outcome}, {len(llm.exchanges)} exchanges")


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=ROOT / "tests" / "fixtures" / "replay")
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    record(CANONICAL_REPLIES, args.out / "minipkg.json", REPOS / "minipkg")

    record(SMOKE_REPLIES, args.out / "bare.json", REPOS / "bare")

    budget = args.out / "budget.json"
    record(BUDGET_REPLIES, budget, REPOS / "minipkg", turn_limit=3)
    entries = load_fixture(budget)
    entries.append(ReplayEntry("0" * 64, UNREACHED_REPLY, 0, estimate_tokens(UNREACHED_REPLY)))
    save_fixture(budget, entries)
    print(f"{budget.name}: {len(entries)} exchanges after padding")
    canonical.read(budget)  # fail loudly if the file is not valid JSON


if __name__ == "__main__":
    main()
