"""``dahsi`` command line.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import json
import logging
import sys

import click

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import COMMANDS

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML experiment config.")
@click.option("--seed", type=int, default=None, help="Base seed (overrides base_seed).")
@click.option("--workers", type=int, default=1, show_default=True, help="Worker processes.")
@click.option("--out", type=click.Path(), default=None, help="Output directory (overrides output).")
@click.option("--preset", default=None, help="Preset used when no config file is given.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, config_path, seed, workers, out, preset, verbose):
    """Sparse model discovery for chaotic systems with hidden variables."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config_path": config_path, "seed": seed, "workers": workers, "out": out,
               "preset": preset}


def _run(ctx, name, **kw):
    o = ctx.obj
    try:
        cfg = load_config(o["config_path"], o["preset"]).override(
            seed=o["seed"], workers=o["workers"], out=o["out"])
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        result = COMMANDS[name](cfg, workers=cfg.workers, **kw)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except Exception as exc:  # noqa: BLE001 - reported through the exit code
        click.echo(f"{name} failed: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(json.dumps(result, indent=2, default=str))


def _simple(name, doc):
    @main.command(name=name, help=doc)
    @click.pass_context
    def cmd(ctx):
        _run(ctx, name)
    return cmd


_simple("simulate", "Simulate a preset and write CSV plus sidecar.")
_simple("discover", "Sweep, down-select, refit and validate; writes reports and plots.")
_simple("robust-noise", "Recovery-rate CDF over noise levels and noise seeds.")
_simple("robust-manifold", "Recovery rate against the number of training points.")
_simple("alpha-study", "Recovery rate against the annealing growth factor.")
_simple("landscape", "Action surfaces over two coefficients.")
_simple("timing", "Wall-clock cost of fixed-structure fits by term count.")


@main.command(name="validate", help="Score the structures of an existing sweep report.")
@click.option("--report", type=click.Path(), default=None, help="Sweep report (default OUT/sweep.json).")
@click.pass_context
def validate(ctx, report):
    _run(ctx, "validate", report_path=report)


__all__ = ["main", "ExperimentConfig"]
