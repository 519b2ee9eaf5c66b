from .core import (
    COMMAND_TIMEOUT, GLOBAL_TIMEOUT, KILL_GRACE, STREAM_CAP, FinalizeResult, Observation, PreflightResult, Sandbox,
    cap_stream, change_runtime_version, create_sandbox, finalize_recipe, install_like, preflight_build,
    successful_commands,
)
from .engine import BuildResult, DockerEngine, Engine, ExecResult, LocalEngine, make_engine, run_process
from .recipe import RecipePlan, parse_recipe, recipe_base_image, render_recipe
