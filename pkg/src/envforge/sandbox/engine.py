"""Container engine abstraction with a Docker CLI binding and a host-process
engine for machines without a container runtime."""

from __future__ import annotations

import hashlib
import itertools
import math
import os
import re
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

from ..errors import EngineUnavailable, SandboxCreateFailure, SandboxLost
from .recipe import parse_recipe, recipe_base_image

KILL_GRACE = 2.0


@dataclass
class ExecResult:
    exit_code: int | None  # None: killed on timeout
    stdout: bytes
    stderr: bytes
    duration: float


@dataclass
class BuildResult:
    ok: bool
    image: str | None
    log: str


def run_process(argv: list[str], timeout: float | None, cwd: str | None = None, env: dict | None = None,
                stdin: bytes | None = None, grace: float = KILL_GRACE) -> ExecResult:
    """Run ``argv``; on timeout send SIGTERM to its process group, SIGKILL after ``grace``."""
    started = time.monotonic()
    proc = subprocess.Popen(argv, cwd=cwd, env=env, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                            stdin=subprocess.PIPE if stdin is not None else subprocess.DEVNULL,
                            start_new_session=True)
    try:
        out, err = proc.communicate(stdin, timeout=timeout)
        return ExecResult(proc.returncode, out, err, time.monotonic() - started)
    except subprocess.TimeoutExpired:
        pass
    _signal_group(proc, signal.SIGTERM)
    try:
        out, err = proc.communicate(timeout=grace)
    except subprocess.TimeoutExpired:
        _signal_group(proc, signal.SIGKILL)
        out, err = proc.communicate()
    return ExecResult(None, out or b"", err or b"", time.monotonic() - started)


def _signal_group(proc: subprocess.Popen, sig: int) -> None:
    try:
        os.killpg(proc.pid, sig)
    except (ProcessLookupError, PermissionError):
        pass


class Engine(ABC):
    name = "abstract"

    @abstractmethod
    def ping(self) -> None:
        """Raise EngineUnavailable when the engine cannot be reached."""

    @abstractmethod
    def build(self, recipe: str, context: Path | None = None, tag: str | None = None) -> BuildResult: ...

    @abstractmethod
    def create(self, image: str, workspace: Path, workdir: str = "/repo") -> str: ...

    @abstractmethod
    def exec(self, cid: str, command: str, timeout: float, workdir: str = "/repo") -> ExecResult: ...

    @abstractmethod
    def alive(self, cid: str) -> bool: ...

    @abstractmethod
    def commit(self, cid: str) -> str: ...

    @abstractmethod
    def restore(self, cid: str, snapshot: str) -> None: ...

    @abstractmethod
    def remove(self, cid: str) -> None: ...

    @abstractmethod
    def read_file(self, cid: str, path: str) -> bytes: ...

    @abstractmethod
    def write_file(self, cid: str, path: str, data: bytes) -> None: ...


# Runs the command under bash when present, under coreutils timeout when present.
_EXEC_WRAPPER = (
    'sh_bin=sh; command -v bash >/dev/null 2>&1 && sh_bin=bash; '
    'if command -v timeout >/dev/null 2>&1; then exec timeout -k 2 "$1" "$sh_bin" -c "$2"; '
    'else exec "$sh_bin" -c "$2"; fi'
)


class DockerEngine(Engine):
    """Docker (or a CLI-compatible engine such as podman) driven through its CLI."""

    name = "docker"

    def __init__(self, binary: str = "docker", build_timeout: float = 3600.0):
        self.binary = binary
        self.build_timeout = build_timeout

    def _run(self, *args: str, timeout: float | None = 120.0, stdin: bytes | None = None) -> ExecResult:
        try:
            return run_process([self.binary, *args], timeout, stdin=stdin)
        except FileNotFoundError:
            raise EngineUnavailable(f"container engine binary {self.binary!r} not found") from None

    def ping(self) -> None:
        res = self._run("version", "--format", "{{.Server.Version}}", timeout=30)
        if res.exit_code != 0:
            raise EngineUnavailable(f"container engine not reachable: {res.stderr.decode(errors='replace')[:500]}")

    def build(self, recipe, context=None, tag=None):
        self.ping()
        with tempfile.TemporaryDirectory(prefix="envforge-build-") as tmp:
            ctx = Path(context) if context else Path(tmp)
            recipe_path = Path(tmp) / "Dockerfile.envforge"
            recipe_path.write_text(recipe, encoding="utf-8")
            tag = tag or "envforge/" + hashlib.sha256(recipe.encode()).hexdigest()[:12]
            res = self._run("build", "-f", str(recipe_path), "-t", tag, str(ctx), timeout=self.build_timeout)
        log = (res.stdout + res.stderr).decode(errors="replace")
        return BuildResult(res.exit_code == 0, tag if res.exit_code == 0 else None, log)

    def create(self, image, workspace, workdir="/repo"):
        res = self._run("run", "-d", "-v", f"{Path(workspace).resolve()}:{workdir}", "-w", workdir,
                        "--entrypoint", "sh", image, "-c", "sleep infinity", timeout=600)
        if res.exit_code != 0:
            raise SandboxCreateFailure(res.stderr.decode(errors="replace")[:2000])
        return res.stdout.decode().strip()

    def exec(self, cid, command, timeout, workdir="/repo"):
        inner = str(max(1, math.ceil(timeout)))
        res = self._run("exec", "-w", workdir, cid, "sh", "-c", _EXEC_WRAPPER, "envforge", inner, command,
                        timeout=timeout + KILL_GRACE)
        if res.exit_code == 124:  # coreutils timeout
            res.exit_code = None
        elif res.exit_code in (125, 126, 127) and not self.alive(cid):
            raise SandboxLost(f"container {cid[:12]} is gone")
        return res

    def alive(self, cid):
        res = self._run("inspect", "-f", "{{.State.Running}}", cid, timeout=30)
        return res.exit_code == 0 and res.stdout.strip() == b"true"

    def commit(self, cid):
        res = self._run("commit", cid, timeout=600)
        if res.exit_code != 0:
            raise SandboxLost(res.stderr.decode(errors="replace")[:500])
        return res.stdout.decode().strip()

    def restore(self, cid, snapshot):
        # the original container is left untouched by a failed switch; nothing to undo while it runs
        if not self.alive(cid):
            raise SandboxLost(f"container {cid[:12]} is gone; snapshot {snapshot} must be recreated manually")

    def remove(self, cid):
        self._run("rm", "-f", cid, timeout=120)

    def read_file(self, cid, path):
        res = self._run("exec", cid, "cat", path, timeout=60)
        if res.exit_code != 0:
            raise FileNotFoundError(path)
        return res.stdout

    def write_file(self, cid, path, data):
        self._run("exec", "-i", cid, "sh", "-c", 'mkdir -p "$(dirname "$1")" && cat > "$1"', "envforge", path,
                  stdin=data, timeout=60)


class LocalEngine(Engine):
    """Host-process engine: a "container" is a scratch directory, commands run on the host.

    There is no isolation. ``/repo`` and ``/tmp`` in commands and outputs are
    mapped to the workspace and a per-container scratch directory. Builds
    validate recipe syntax and, when ``available_images`` is given, that the
    base image is one of them; build steps are not executed.
    """

    name = "local"
    _MAPPED = ("/repo", "/tmp")

    def __init__(self, root: Path | str | None = None, available_images: set[str] | None = None,
                 shell: str = "bash"):
        self._tmp = None
        if root is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="envforge-local-")
            root = self._tmp.name
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.available_images = available_images
        self.shell = shutil.which(shell) or "/bin/sh"
        self.images: dict[str, str] = {}
        self.containers: dict[str, dict] = {}
        self._ids = itertools.count(1)

    def ping(self) -> None:
        if not self.root.exists():
            raise EngineUnavailable(f"engine root {self.root} missing")

    def _image_ok(self, ref: str) -> bool:
        return ref in self.images or self.available_images is None or ref in self.available_images

    def build(self, recipe, context=None, tag=None):
        self.ping()
        try:
            parse_recipe(recipe)
            base = recipe_base_image(recipe)
        except ValueError as exc:
            return BuildResult(False, None, f"invalid recipe: {exc}")
        if not self._image_ok(base):
            return BuildResult(False, None, f"pull access denied for {base}: image not found")
        tag = tag or "local/" + hashlib.sha256(recipe.encode()).hexdigest()[:12]
        self.images[tag] = recipe
        return BuildResult(True, tag, f"validated recipe from {base}")

    def create(self, image, workspace, workdir="/repo"):
        if not self._image_ok(image):
            raise SandboxCreateFailure(f"image {image} not available")
        cid = f"local-{next(self._ids)}"
        scratch = self.root / cid / "tmp"
        scratch.mkdir(parents=True)
        bindir = self.root / cid / "bin"
        bindir.mkdir()
        if shutil.which("python") is None:
            # container images answer to "python"; hosts often only ship python3
            (bindir / "python").symlink_to(sys.executable)
        self.containers[cid] = {"image": image, "repo": Path(workspace).resolve(), "tmp": scratch.resolve(),
                                "bin": bindir.resolve(), "alive": True, "snapshots": {}}
        return cid

    def _box(self, cid: str) -> dict:
        box = self.containers.get(cid)
        if box is None or not box["alive"]:
            raise SandboxLost(f"container {cid} is gone")
        return box

    _VIRTUAL_RE = re.compile(r"(?<![\w./-])(/repo|/tmp)(?=$|[/\s'\"`;&|)<>:=])")

    def _to_host(self, box: dict, text: str) -> str:
        return self._VIRTUAL_RE.sub(lambda m: str(box[m.group(1)[1:]]), text)

    def _to_virtual(self, box: dict, data: bytes) -> bytes:
        # longest host path first so a workspace nested under another mapping wins
        pairs = sorted(((str(box[v[1:]]).encode(), v.encode()) for v in self._MAPPED), key=lambda p: -len(p[0]))
        pattern = re.compile(b"|".join(re.escape(h) for h, _ in pairs))
        lookup = dict(pairs)
        return pattern.sub(lambda m: lookup[m.group(0)], data)

    def host_path(self, cid: str, path: str) -> Path:
        return Path(self._to_host(self._box(cid), path))

    def exec(self, cid, command, timeout, workdir="/repo"):
        box = self._box(cid)
        env = dict(os.environ, TMPDIR=str(box["tmp"]), PYTHONDONTWRITEBYTECODE="1",
                   PATH=f"{box['bin']}{os.pathsep}{os.environ.get('PATH', '')}")
        cwd = self._to_host(box, workdir)
        res = run_process([self.shell, "-c", self._to_host(box, command)], timeout, cwd=cwd, env=env)
        res.stdout = self._to_virtual(box, res.stdout)
        res.stderr = self._to_virtual(box, res.stderr)
        return res

    def alive(self, cid):
        box = self.containers.get(cid)
        return bool(box and box["alive"])

    def commit(self, cid):
        box = self._box(cid)
        ref = f"local-snapshot/{cid}-{len(box['snapshots']) + 1}"
        dest = self.root / cid / "snapshots" / str(len(box["snapshots"]) + 1)
        shutil.copytree(box["repo"], dest / "repo", symlinks=True)
        shutil.copytree(box["tmp"], dest / "tmp", symlinks=True)
        box["snapshots"][ref] = dest
        self.images[ref] = f"FROM {box['image']}\n"
        return ref

    def restore(self, cid, snapshot):
        box = self._box(cid)
        src = box["snapshots"][snapshot]
        for part in ("repo", "tmp"):
            target = box[part]
            for child in list(target.iterdir()):
                if child.is_dir() and not child.is_symlink():
                    shutil.rmtree(child)
                else:
                    child.unlink()
            shutil.copytree(src / part, target, symlinks=True, dirs_exist_ok=True)

    def remove(self, cid):
        box = self.containers.get(cid)
        if box:
            box["alive"] = False
            shutil.rmtree(self.root / cid, ignore_errors=True)

    def read_file(self, cid, path):
        return self.host_path(cid, path).read_bytes()

    def write_file(self, cid, path, data):
        target = self.host_path(cid, path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)


def make_engine(name: str, **kwargs) -> Engine:
    if name == "docker":
        return DockerEngine(**kwargs)
    if name == "podman":
        return DockerEngine(binary="podman", **kwargs)
    if name == "local":
        return LocalEngine(**kwargs)
    raise ValueError(f"unknown engine {name!r}")
