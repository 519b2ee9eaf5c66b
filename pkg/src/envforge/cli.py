"""Command line entry point."""

from __future__ import annotations

import datetime as dt
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Protocol

import click

from . import canonical
from .agent import SessionTrace
from .config import DRIVERS, ENGINES, MODES, RunConfig
from .errors import EXIT_CODES, ConfigError, EnvForgeError, UnsupportedTrace
from .evaluation import RepoMeta, eligibility, stratified_sample


class HostingSearchClient(Protocol):
    def candidates(self) -> list[dict]: ...


class FileSearchClient:
    """Candidate repositories from a JSON file (a list of repository metadata objects)."""

    def __init__(self, path: Path | str):
        self.path = Path(path)

    def candidates(self) -> list[dict]:
        try:
            data = canonical.read(self.path)
        except (OSError, ValueError) as exc:
            raise click.ClickException(f"search client unreachable: {exc}") from None
        return data.get("candidates", data) if isinstance(data, dict) else data


def _config(ctx_obj, overrides: dict) -> RunConfig:
    base = RunConfig.load(ctx_obj["config"]) if ctx_obj.get("config") else RunConfig()
    return base.merged(**overrides)


def _run_options(fn):
    options = [
        click.option("--engine", type=click.Choice(ENGINES)),
        click.option("--available-image", "available_images", multiple=True,
                     help="Local engine only: image references treated as pullable."),
        click.option("--driver", type=click.Choice(DRIVERS)),
        click.option("--fixture", type=click.Path(dir_okay=False), help="Replay/record fixture file."),
        click.option("--mode", type=click.Choice(MODES)),
        click.option("--turn-limit", type=int),
        click.option("--token-limit", type=int),
        click.option("--command-timeout", type=float),
        click.option("--global-timeout", type=float),
        click.option("--parallelism", type=int),
        click.option("--output-dir", type=click.Path(file_okay=False)),
        click.option("--mirror", "mirrors", multiple=True, metavar="ECOSYSTEM=URL"),
        click.option("--allowed-versions", type=click.Path(dir_okay=False)),
        click.option("--issue-db", type=click.Path(dir_okay=False)),
        click.option("--expertise-store", type=click.Path(dir_okay=False)),
        click.option("--llm-base-url"),
        click.option("--llm-model"),
        click.option("--temperature", type=float),
        click.option("--registry-search/--no-registry-search", default=None),
        click.option("--web-search/--no-web-search", default=None),
        click.option("--frozen-clock/--live-clock", default=None),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _overrides(kwargs: dict) -> dict:
    out = dict(kwargs)
    mirrors = out.pop("mirrors", ()) or ()
    if mirrors:
        pairs = {}
        for item in mirrors:
            if "=" not in item:
                raise ConfigError(f"mirror must look like ECOSYSTEM=URL, got {item!r}")
            k, v = item.split("=", 1)
            pairs[k.strip()] = v.strip()
        out["mirrors"] = pairs
    images = out.pop("available_images", ()) or ()
    if images:
        out["available_images"] = list(images)
    return out


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, exists=True),
              help="Run configuration file (JSON). Flags override its values.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def cli(ctx, config_path, verbose):
    """Set up runnable environments for source repositories."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config": config_path}


@cli.command()
@click.argument("source")
@click.option("--revision", help="Commit, tag or branch to check out when SOURCE is a URL.")
@click.option("--id", "repo_id", help="Repository id used for the output directory.")
@_run_options
@click.pass_obj
def configure(obj, source, revision, repo_id, **kwargs):
    """Configure one repository from a local path or clone URL."""
    from .pipeline import configure as run_configure

    config = _config(obj, _overrides(kwargs))
    out = run_configure(source, config, repo_id=repo_id, revision=revision)
    click.echo(f"outcome: {out.outcome}")
    if out.failure:
        click.echo(f"failure: {out.failure}")
    if out.image:
        click.echo(f"image: {out.image}")
    if out.score and out.score.essr is not None:
        click.echo(f"essr: {out.score.essr:.4f} ({out.score.scenario})")
    if out.score and out.score.build_success is not None:
        click.echo(f"build success: {out.score.build_success}")
    click.echo(f"artifacts: {out.out_dir}")
    sys.exit(out.exit_code)


@cli.command()
@click.argument("manifest", type=click.Path(dir_okay=False, exists=True))
@_run_options
@click.pass_obj
def evaluate(obj, manifest, **kwargs):
    """Configure and score every repository listed in MANIFEST."""
    from .evaluation import render_table
    from .pipeline import evaluate_batch, load_manifest

    overrides = _overrides(kwargs)
    try:
        entries = load_manifest(manifest)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot parse manifest {manifest}: {exc}") from None
    driver = None
    if overrides.get("driver") in ("replay", "record") and not overrides.get("fixture"):
        # each entry brings its own fixture, so the driver is applied per entry
        missing = [e.source for e in entries if not e.fixture]
        if missing:
            raise ConfigError(f"the {overrides['driver']} driver needs a fixture for {missing[0]}")
        driver = overrides.pop("driver")
    config = _config(obj, overrides)
    report = evaluate_batch(entries, config, driver=driver)
    click.echo(render_table(report["summary"]))
    failed = sum(1 for r in report["records"] if r["outcome"] == "failed")
    click.echo(f"{len(report['records'])} records, {failed} failed entries; report in {config.output_dir}")


def transcript_rows(trace: SessionTrace) -> list[str]:
    rows = []
    for i, step in enumerate(trace.steps, 1):
        obs = step.observation
        status = "-" if obs is None else ("timeout" if obs.exit_code is None else str(obs.exit_code))
        duration = 0.0 if obs is None else obs.duration
        action = step.action.describe().splitlines()[0] if step.action.describe() else step.action.kind
        rows.append(f"{i:>4}  {duration:>8.2f}s  {status:>7}  {step.action.kind:<5}  {action}")
    return rows


@cli.command()
@click.argument("trace_file", type=click.Path(dir_okay=False, exists=True))
@click.option("--full", is_flag=True, help="Also print thoughts and observations.")
def replay(trace_file, full):
    """Print the step-by-step transcript of a saved session trace."""
    try:
        trace = SessionTrace.loads(Path(trace_file).read_text(encoding="utf-8"))
    except (ValueError, KeyError, TypeError) as exc:
        raise UnsupportedTrace(f"{trace_file}: {exc}") from None
    click.echo(f"repository {trace.repo_id} ({trace.language or 'unknown'}), mode {trace.mode}, "
               f"outcome {trace.outcome}")
    click.echo(f"{'step':>4}  {'duration':>9}  {'exit':>7}  {'kind':<5}  action")
    for row, step in zip(transcript_rows(trace), trace.steps):
        click.echo(row)
        if full:
            if step.thought:
                click.echo("      thought: " + step.thought.replace("\n", "\n               "))
            if step.observation is not None:
                click.echo("      " + step.observation.render().replace("\n", "\n      "))
    total = sum(s.observation.duration for s in trace.steps if s.observation)
    click.echo(f"{len(trace.steps)} steps, {total:.2f}s in commands, {trace.wasted_turns} wasted turns")


@cli.group()
def corpus():
    """Build candidate and sample manifests for benchmark corpora."""


@corpus.command()
@click.option("--candidates", type=click.Path(dir_okay=False), required=True,
              help="JSON list of repository metadata returned by the hosting search.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--now", help="Reference date for the activity window (ISO 8601); defaults to today.")
def collect(candidates, out_path, now):
    """Keep the eligible candidates and write them to a manifest."""
    when = dt.datetime.fromisoformat(now) if now else dt.datetime.now(dt.timezone.utc)
    if when.tzinfo is None:
        when = when.replace(tzinfo=dt.timezone.utc)
    kept, dropped = [], {}
    for raw in FileSearchClient(candidates).candidates():
        meta = RepoMeta.from_dict(raw)
        verdict = eligibility(meta, now=when)
        if verdict.eligible:
            kept.append({**asdict(meta), "priority": verdict.priority})
        else:
            dropped[meta.id] = verdict.reasons
    canonical.write(Path(out_path), {"candidates": kept, "excluded": dropped})
    click.echo(f"{len(kept)} eligible, {len(dropped)} excluded -> {out_path}")


@corpus.command()
@click.option("--candidates", type=click.Path(dir_okay=False, exists=True), required=True)
@click.option("--quota", type=click.IntRange(min=1), required=True, help="Repositories per (size, stars) cell.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def sample(candidates, quota, seed, out_path):
    """Draw a seeded stratified sample from a candidate manifest."""
    metas = [RepoMeta.from_dict(c) for c in FileSearchClient(candidates).candidates()]
    result = stratified_sample(metas, quota, seed)
    canonical.write(Path(out_path), {
        "seed": seed, "quota": quota,
        "entries": [{"id": m.id, "source": m.clone_url or m.id} for m in result.selected],
        "per_cell": result.per_cell, "shortfall": result.shortfall,
    })
    click.echo(f"{len(result.selected)} repositories sampled -> {out_path}")


@cli.command("exit-codes")
def exit_codes():
    """List the exit statuses this tool uses."""
    for code, meaning in sorted(EXIT_CODES.items()):
        click.echo(f"{code:>3}  {meaning}")


def main(argv=None) -> None:
    try:
        cli.main(args=argv, prog_name="envforge", standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(1)
    except EnvForgeError as exc:
        click.echo(f"error[{exc.code}]: {exc}", err=True)
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    main()
