"""Prompt templates for the setup agent."""

from __future__ import annotations

DEFAULT_ROLE = ("You configure software environments. Your job is to get the repository below installed "
                "and its checks passing inside the container you are attached to.")

DEFAULT_WORKFLOW = (
    "Look around: list the repository layout and find out what the container image already provides.",
    "Locate how the project is meant to be run or tested: entry points, test directories, example commands. "
    "Try the checks once before changing anything.",
    "Read the documentation that ships with the repository (README, INSTALL, CONTRIBUTING, docs/).",
    "Open the files that describe the environment: build manifests, lock files, CI workflows, version files.",
    "Gather every dependency declaration you can find, at the root and in subprojects.",
    "Install what is missing, preferring the project's own declarations over guesses; fix errors as they appear.",
    "Run the checks again. Once they pass, answer with the stop action.",
)

STANDARD_TEMPLATE = """{role}

The repository is mounted read-write at {workdir} in a container started from {image}. The main language is {language}. Any container build file that came with the repository has been removed, so do not rely on one.

How to proceed:
{workflow}

How to answer:
Every reply has two parts. Under "### Thought:" write one or two sentences of reasoning. Under "### Action:" put exactly one command inside a fenced code block. The command runs in a fresh shell at {workdir}; shell state such as `cd` or exported variables does not carry over to the next command. Put the command on one line and chain steps with && when needed. Do not use heredocs or backslash line continuations. Change files in {workdir} only when the setup requires it.

Example reply:
### Thought: I need to see what the project contains.
### Action:
```bash
ls-structure --repo {workdir} --depth 2
```

Besides ordinary shell commands you can call these tools (they are not programs on PATH, so call them alone, not inside pipelines):
{tools}

The session is limited to {max_turns} turns. A run only counts as successful if the most recent check passed before you stop, so verify first and then reply with:
```
stop
```"""

PLAN_TEMPLATE = """# Setup plan: {image}

## Goal
Get the repository working in {image} so that its checks pass, within {max_turns} turns.

### Phase 1: Repository Analysis
- [ ] Survey the directory layout
- [ ] Find the entry point and the tests
- [ ] Read the README and other docs
- [ ] List the dependency files
- **Status**: pending

### Phase 2: Dependency Installation
- [ ] Install system packages, if any
- [ ] Install project dependencies and resolve conflicts
- [ ] Install development and test tools
- **Status**: pending

### Phase 3: Environment Configuration
- [ ] Set environment variables
- [ ] Prepare services or data the project needs, if any
- [ ] Fix paths and permissions
- **Status**: pending

### Phase 4: Testing & Validation
- [ ] Run the checks and fix what fails
- **Status**: pending

## Current Phase
Phase 1

## Notes
"""

AUTOMATED_TEMPLATE = """{role}

You work from a plan file, {workdir}/plan.md. The repository is mounted at {workdir} in a container started from {image}, and its main language is {language}.

Stage A, writing the plan. If {workdir}/plan.md does not exist yet, look at the repository first and then create the plan with the edit-file tool (mode insert). Fill in concrete items; keep the four phases and the status lines of this skeleton:

```markdown
{plan_template}```

Stage B, following the plan. Work on the first phase whose status is not complete. When you start a phase, set its status to in_progress with edit-file; when every item in it is done, tick its boxes ([x]) and set the status to complete. Then move on to the next phase. Status values are pending, in_progress and complete.

How to answer:
Under "### Thought:" give brief reasoning. Under "### Action:" put exactly one command in a fenced code block; it runs in a fresh shell at {workdir}. Keep it on one line; no heredocs or backslash continuations.

Tools you can call besides shell commands:
{tools}

You have {max_turns} turns. When the checks pass and the plan is complete, reply with a fenced `stop`."""

REPROMPT = ("I could not find a command in your reply ({error}). Answer again using the required format: "
            "a \"### Thought:\" line, then \"### Action:\" followed by exactly one fenced code block.")

KICKOFF = "Start configuring the repository {name}. You are on turn 1 of {max_turns}."


def render_workflow(steps) -> str:
    return "\n".join(f"{i}. {s}" for i, s in enumerate(steps))


def expertise_block(records) -> str:
    if not records:
        return ""
    lines = ["", "Fixes that worked for similar errors in earlier sessions:"]
    for r in records:
        lines.append(f"- when you see \"{r.error_signature}\": " + " && ".join(r.resolution_commands))
    return "\n".join(lines)


def build_standard_prompt(repo, plugin, toolset, expertise=(), image: str = "", max_turns: int = 30,
                          workdir: str = "/repo") -> list[dict]:
    system = STANDARD_TEMPLATE.format(
        role=plugin.prompt_role or DEFAULT_ROLE,
        workdir=workdir,
        image=image or plugin.runtime.reference(),
        language=plugin.language,
        workflow=render_workflow(plugin.workflow or DEFAULT_WORKFLOW),
        tools=toolset.describe(),
        max_turns=max_turns,
    ) + expertise_block(expertise)
    return [{"role": "system", "content": system},
            {"role": "user", "content": KICKOFF.format(name=repo.name, max_turns=max_turns)}]


def build_automated_prompt(repo, plugin, toolset, expertise=(), image: str = "", max_turns: int = 30,
                           workdir: str = "/repo") -> list[dict]:
    image = image or plugin.runtime.reference()
    system = AUTOMATED_TEMPLATE.format(
        role=plugin.prompt_role or DEFAULT_ROLE,
        workdir=workdir,
        image=image,
        language=plugin.language,
        plan_template=PLAN_TEMPLATE.format(image=image, max_turns=max_turns),
        tools=toolset.describe(),
        max_turns=max_turns,
    ) + expertise_block(expertise)
    return [{"role": "system", "content": system},
            {"role": "user", "content": KICKOFF.format(name=repo.name, max_turns=max_turns)}]
