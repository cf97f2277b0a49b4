"""Operator entry points: run, simulate, replay, stats.

Exit codes: 0 success, 1 configuration error, 2 aborted or failed run.
"""

from __future__ import annotations

import sys
from typing import Optional

import click

from .config import ConfigError, RunConfig, load_config
from .looprunner import StepAborted, run_loop
from .simkit import SimScenario, simulate
from .store import ManifestMismatch, RunStore, SchemaMismatch, replay as replay_log


def _build_config(config_path: Optional[str], **overrides) -> RunConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if config_path:
        return load_config(config_path, overrides)
    return RunConfig.from_dict(overrides)


_COMMON_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(exists=True),
                 help="YAML config file; flags override file values."),
    click.option("--tau", type=float, default=None),
    click.option("--gamma", type=float, default=None),
    click.option("--steps", type=int, default=None),
    click.option("--seed", type=int, default=None),
    click.option("--batch-size", "batch_size", type=int, default=None),
    click.option("--warmup-steps", "warmup_steps", type=int, default=None),
    click.option("--solve-mode", "solve_mode",
                 type=click.Choice(["deduction", "abduction"]), default=None),
    click.option("--out", "out_dir", type=click.Path(), default=None),
    click.option("--run-id", default=None),
]


def _with_common(fn):
    for opt in reversed(_COMMON_OPTIONS):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Self-evolving task-generation RL loop: run, simulate, replay, stats."""


@main.command()
@_with_common
@click.option("--backend", type=click.Choice(["synthetic", "http"]), default=None)
@click.option("--resume", is_flag=True, help="Resume from the run checkpoint.")
def run(config_path, run_id, resume, **overrides):
    """Execute the training loop and persist its logs."""
    try:
        cfg = _build_config(config_path, **overrides)
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    try:
        summary = run_loop(cfg, run_id=run_id, resume=resume)
    except StepAborted as exc:
        click.echo(f"run aborted: {exc}", err=True)
        sys.exit(2)
    click.echo(f"run complete: {summary.steps_completed} steps, "
               f"{summary.tasks_validated}/{summary.tasks_proposed} tasks validated, "
               f"{summary.external_accepted} external records, "
               f"log at {summary.run_dir}")


@main.command(name="simulate")
@_with_common
def simulate_cmd(config_path, run_id, **overrides):
    """Run a synthetic-backend simulation (persisted like a real run)."""
    try:
        cfg = _build_config(config_path, backend="synthetic", **overrides)
        scenario = SimScenario(
            steps=cfg.steps, batch_size=cfg.batch_size, tau=cfg.tau,
            gamma=cfg.gamma, warmup_steps=cfg.warmup_steps, seed=cfg.seed,
            shuffle_z=cfg.shuffle_z, synthetic=cfg.synthetic,
        )
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    try:
        result = simulate(scenario, run_id=run_id, out_dir=cfg.out_dir)
    except StepAborted as exc:
        click.echo(f"simulation aborted: {exc}", err=True)
        sys.exit(2)
    summary = result.summary
    click.echo(f"simulation complete: {summary.steps_completed} steps, "
               f"final skill {summary.final_skill:.4f}, "
               f"selected {summary.selected}/{summary.eligible_allfail} eligible, "
               f"log at {summary.run_dir}")


@main.command(name="replay")
@click.argument("run_dir", type=click.Path(exists=True))
def replay_cmd(run_dir):
    """Recompute rewards, z-scores, probabilities, and advantages from a log."""
    try:
        report = replay_log(run_dir)
    except (SchemaMismatch, ManifestMismatch, FileNotFoundError) as exc:
        click.echo(f"replay failed: {exc}", err=True)
        sys.exit(2)
    click.echo(f"{len(report.mismatches)} mismatches over "
               f"{report.records_checked} checks in {report.steps_checked} steps")
    for m in report.mismatches[:20]:
        click.echo(f"  step {m.step} {m.kind} {m.where}: "
                   f"expected {m.expected!r}, logged {m.got!r}")
    sys.exit(0 if report.ok else 2)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
def stats(run_dir):
    """Emit the per-step metric series as a tab-separated table."""
    store = RunStore(run_dir)
    try:
        store.read_manifest()
    except (SchemaMismatch, FileNotFoundError) as exc:
        click.echo(f"stats failed: {exc}", err=True)
        sys.exit(2)
    columns = ("step", "dp_reward_mean", "rollout_accuracy",
               "generator_reward_mean", "solver_reward_mean",
               "eligible_allfail", "selected", "external_accepted",
               "z_selected_mean", "z_unselected_mean", "skill")
    click.echo("\t".join(columns))
    for step in store.steps_on_disk():
        reports = store.read_stream(step, "report")
        if not reports:
            continue
        r = reports[0]
        row = []
        for col in columns:
            value = r.get(col)
            row.append("" if value is None else str(value))
        click.echo("\t".join(row))


if __name__ == "__main__":
    main()
