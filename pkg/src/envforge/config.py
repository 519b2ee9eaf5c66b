"""Run configuration with its defaults and validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import canonical
from .errors import ConfigError

ENGINES = ("docker", "podman", "local")
DRIVERS = ("live", "replay", "record")
MODES = ("standard", "automated")


@dataclass
class RunConfig:
    # completion endpoint: base URL and model may come from here or the environment; the key never does
    llm_base_url: str | None = None
    llm_model: str | None = None
    temperature: float = 0.0
    driver: str = "live"
    fixture: str | None = None
    engine: str = "docker"
    available_images: list[str] | None = None  # local engine only: images treated as pullable
    mirrors: dict[str, str] = field(default_factory=dict)
    allowed_versions: str | None = None
    issue_db: str | None = None
    expertise_store: str | None = None
    registry_search: bool = True
    web_search: bool = True
    turn_limit: int = 30
    token_limit: int = 150_000
    command_timeout: float = 600.0
    global_timeout: float = 7200.0
    mode: str = "standard"
    parallelism: int = 1
    output_dir: str = "out"
    frozen_clock: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("turn_limit", "token_limit", "command_timeout", "global_timeout", "parallelism"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {', '.join(ENGINES)}")
        if self.driver not in DRIVERS:
            raise ConfigError(f"driver must be one of {', '.join(DRIVERS)}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        if self.driver in ("replay", "record") and not self.fixture:
            raise ConfigError(f"the {self.driver} driver needs a fixture path")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError("temperature must be within [0, 2]")
        if not isinstance(self.mirrors, dict):
            raise ConfigError("mirrors must map ecosystem names to URLs")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if any("key" in k.lower() or "secret" in k.lower() or "token" == k.lower() for k in data):
            raise ConfigError("credentials belong in environment variables, not config files")
        return cls(**data)

    @classmethod
    def load(cls, path: Path | str) -> "RunConfig":
        try:
            data = canonical.read(Path(path))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def merged(self, **overrides) -> "RunConfig":
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**data)
