"""Command-line entry point.

    recpipe synth|build|train|predict|eval|importance --config <file>
            [--seed N] [--train-locales a,b] [--eval-locales c]

Exit codes: 0 success, 2 validation/config error, 1 runtime error.
"""

from __future__ import annotations

import sys
from dataclasses import replace

import click

from . import pipeline
from .pipeline import ConfigError, PipelineConfig, StageError


def _load_config(config_path, seed, train_locales, eval_locales) -> PipelineConfig:
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if train_locales:
        overrides["train_locales"] = [s for s in train_locales.split(",") if s]
    if eval_locales:
        overrides["eval_locales"] = [s for s in eval_locales.split(",") if s]
    return PipelineConfig.from_file(config_path, **overrides)


def _common(fn):
    fn = click.option("--eval-locales", default=None, help="comma-separated locale filter for evaluation")(fn)
    fn = click.option("--train-locales", default=None, help="comma-separated locales whose rows feed training")(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--config", "config_path", required=True, type=click.Path())(fn)
    return fn


@click.group()
def cli():
    """Session-based next-item recommendation pipeline."""


@cli.command()
@_common
def synth(config_path, seed, train_locales, eval_locales):
    """Generate a synthetic corpus (requires --seed)."""
    if seed is None:
        raise ConfigError("synth requires --seed")
    cfg = _load_config(config_path, seed, train_locales, eval_locales)
    pipeline.stage_synth(cfg)
    click.echo(f"wrote {cfg.sessions} and {cfg.products}")


@cli.command()
@_common
def build(config_path, seed, train_locales, eval_locales):
    """Build counters, leak-safe bundle, candidates, and feature files."""
    cfg = _load_config(config_path, seed, train_locales, eval_locales)
    artifacts = pipeline.stage_build(cfg)
    click.echo(
        f"built {len(artifacts.sessions)} sessions -> "
        f"{len(artifacts.train_features)} feature rows in {cfg.workdir}"
    )


@cli.command()
@_common
def train(config_path, seed, train_locales, eval_locales):
    """Train the re-ranker on built features (requires --seed)."""
    if seed is None:
        raise ConfigError("train requires --seed")
    cfg = _load_config(config_path, seed, train_locales, eval_locales)
    model = pipeline.stage_train(cfg)
    click.echo(f"trained {len(model.trees)} trees -> {cfg.workpath('model.json')}")


@cli.command()
@_common
def predict(config_path, seed, train_locales, eval_locales):
    """Score test sessions and write predictions.jsonl."""
    cfg = _load_config(config_path, seed, train_locales, eval_locales)
    rankings = pipeline.stage_predict(cfg)
    click.echo(f"wrote {len(rankings)} rankings -> {cfg.workpath('predictions.jsonl')}")


@cli.command(name="eval")
@_common
def eval_cmd(config_path, seed, train_locales, eval_locales):
    """Compute MRR@K of predictions against held-out next items."""
    cfg = _load_config(config_path, seed, train_locales, eval_locales)
    report = pipeline.stage_eval(cfg)
    click.echo(report.to_json())


@cli.command()
@_common
def importance(config_path, seed, train_locales, eval_locales):
    """Write the top-20 feature importance TSV."""
    cfg = _load_config(config_path, seed, train_locales, eval_locales)
    ranked = pipeline.stage_importance(cfg)
    for i, (name, score) in enumerate(ranked, start=1):
        click.echo(f"{i}\t{name}\t{score}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 2
    except click.UsageError as exc:
        click.echo(f"usage error: {exc}", err=True)
        return 2
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except StageError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # surfaced with stage context where available
        click.echo(f"error: {exc}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
