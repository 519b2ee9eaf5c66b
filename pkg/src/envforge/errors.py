"""Error types. Every error carries a kebab-case ``code`` and a CLI exit code."""

from __future__ import annotations


class EnvForgeError(Exception):
    code = "error"
    exit_code = 1

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details


# repository model
class RepositoryError(EnvForgeError):
    code = "repository-error"
    exit_code = 8


class UnreadableRoot(RepositoryError):
    code = "unreadable-root"


class EmptyRepository(RepositoryError):
    code = "empty-repository"


class UndetectableLanguage(RepositoryError):
    code = "undetectable-language"


class NotText(RepositoryError):
    code = "not-text"


class CloneFailure(RepositoryError):
    code = "clone-failure"


# language plugins
class PluginError(EnvForgeError):
    code = "plugin-error"
    exit_code = 8


class AlreadyRegistered(PluginError):
    code = "already-registered"


class UnsupportedLanguage(PluginError):
    code = "unsupported-language"


class PluginMismatch(PluginError):
    code = "plugin-mismatch"


# image retrieval
class SpecParseFailure(EnvForgeError):
    code = "spec-parse-failure"
    exit_code = 11


class NoCandidates(EnvForgeError):
    code = "no-candidates"
    exit_code = 11


# completion service
class LLMError(EnvForgeError):
    code = "llm-error"
    exit_code = 7


class LLMUnavailable(LLMError):
    code = "llm-unavailable"


class BudgetExceeded(LLMError):
    code = "budget-exceeded"
    exit_code = 4


class FixtureDrift(LLMError):
    code = "fixture-drift"
    exit_code = 12


class FixtureExhausted(FixtureDrift):
    code = "fixture-exhausted"


# container engine / sandbox
class BuildFailure(EnvForgeError):
    code = "build-failure"
    exit_code = 6

    def __init__(self, message: str = "", log: str = "", **details):
        super().__init__(message, **details)
        self.log = log


class EngineUnavailable(BuildFailure):
    code = "engine-unavailable"
    exit_code = 5


class SandboxError(EnvForgeError):
    code = "sandbox-error"
    exit_code = 3


class SandboxCreateFailure(SandboxError):
    code = "sandbox-create-failure"
    exit_code = 6


class InvalidState(SandboxError):
    code = "invalid-state"


class GlobalTimeout(SandboxError):
    code = "global-timeout"


class SandboxLost(SandboxError):
    code = "sandbox-lost"


class VersionSwitchUnsupported(SandboxError):
    code = "version-switch-unsupported"


class RolledBack(SandboxError):
    code = "rolled-back"


class FinalizeFailure(SandboxError):
    code = "finalize-failure"


# toolset
class ToolError(EnvForgeError):
    code = "tool-error"


class SchemaError(ToolError):
    code = "schema-error"


class NothingToRun(ToolError):
    code = "nothing-to-run"


class RunnerAbsent(ToolError):
    code = "runner-absent"


class BadRange(ToolError):
    code = "bad-range"


class NoMatch(ToolError):
    code = "no-match"


class NoCI(ToolError):
    code = "no-ci"


class IssueDBUnavailable(ToolError):
    code = "issue-db-unavailable"


# agent
class Unparseable(EnvForgeError):
    code = "unparseable"


# evaluation
class UndefinedESSR(EnvForgeError):
    code = "undefined-essr"


class EmptyReport(EnvForgeError):
    code = "empty-report"


# cli
class UnsupportedTrace(EnvForgeError):
    code = "unsupported-trace"
    exit_code = 9


class ConfigError(EnvForgeError):
    code = "config-error"
    exit_code = 10


# Exit status of the command line tool, one row per outcome.
EXIT_SUCCESS = 0
EXIT_CRITICAL = 3  # session ended without a working environment
EXIT_BUDGET = 4    # budget-exhausted outcome

EXIT_CODES = {
    0: "success",
    1: "unexpected error",
    2: "usage error",
    3: "critical failure (sandbox lost, global timeout, stop without passing check, finalize failure)",
    4: "budget exhausted (turns or tokens)",
    5: "container engine unavailable",
    6: "recipe build or sandbox creation failed",
    7: "completion endpoint error",
    8: "repository unreadable, empty or in an unsupported language",
    9: "unsupported or tampered trace",
    10: "invalid configuration",
    11: "no usable base image",
    12: "replay fixture does not match the session",
}


def _subclasses(cls):
    for sub in cls.__subclasses__():
        yield sub
        yield from _subclasses(sub)


def exit_code_for(code: str | None) -> int:
    """Exit status for an error code string as stored in traces."""
    if not code:
        return EXIT_CRITICAL
    for cls in _subclasses(EnvForgeError):
        if cls.code == code:
            return cls.exit_code if cls.exit_code not in (1,) else EXIT_CRITICAL
    return EXIT_CRITICAL
