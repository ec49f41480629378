"""Command-line entry point: ``whfl simulate|bound|validate|sweep``."""

from __future__ import annotations

import sys

import click

from .experiment import (ConfigError, cmd_bound, cmd_simulate, cmd_sweep, cmd_validate,
                         load_config)


def _load(config, seed, trials, extra=None):
    over = dict(extra or {})
    if seed is not None:
        over["seed"] = seed
    if trials is not None:
        over["trials"] = trials
    try:
        return load_config(config, over)
    except ConfigError as exc:
        raise click.UsageError(f"invalid config: {exc}") from exc


def _common(f):
    f = click.option("--trials", type=click.IntRange(min=1), default=None,
                     help="Monte Carlo trial count.")(f)
    f = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
                     help="Output directory (default: config 'out').")(f)
    f = click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None,
                     help="Master seed.")(f)
    f = click.option("--config", "config", type=click.Path(exists=True, dir_okay=False),
                     default=None, help="JSON experiment config.")(f)
    return f


@click.group()
def main():
    """Two-hop over-the-air hierarchical federated learning simulator.

    Any config key can be overridden with an environment variable WHFL_<KEY>.
    """


@main.command()
@_common
def simulate(config, seed, out_dir, trials):
    """Train every configured mode on one shared topology; one CSV per mode."""
    exp = _load(config, seed, trials)
    try:
        paths = cmd_simulate(exp, out_dir or exp.out)
    except FileNotFoundError as exc:
        raise click.ClickException(str(exc)) from exc
    for name, p in paths.items():
        click.echo(f"{name}: {p}")


@main.command()
@_common
def bound(config, seed, out_dir, trials):
    """Evaluate the convergence bound for the three variants."""
    exp = _load(config, seed, trials)
    try:
        paths = cmd_bound(exp, out_dir or exp.out)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    for name, p in paths.items():
        click.echo(f"{name}: {p}")


@main.command()
@_common
def validate(config, seed, out_dir, trials):
    """Monte Carlo check of the second-moment identities; exits 1 on any failure."""
    exp = _load(config, seed, trials)
    rep, path = cmd_validate(exp, out_dir or exp.out)
    for t in rep["terms"]:
        flag = "ok" if t["pass"] else "FAIL"
        click.echo(f"{t['term']:>20s}  z={t['z_score']:+.2f}  {flag}")
    if rep["low_confidence"]:
        click.echo(f"warning: {rep['trials']} trials, results are low-confidence", err=True)
    click.echo(f"report: {path}")
    sys.exit(0 if rep["pass"] else 1)


@main.command()
@_common
@click.option("--param", default=None,
              help="KEY=V1,V2,... sweep (values parsed as JSON when possible).")
def sweep(config, seed, out_dir, trials, param):
    """Run simulate over a list of values of one config key."""
    extra = {}
    if param:
        import json
        key, _, vals = param.partition("=")
        parsed = []
        for v in vals.split(","):
            try:
                parsed.append(json.loads(v))
            except json.JSONDecodeError:
                parsed.append(v)
        extra = {"sweep_key": key, "sweep_values": parsed}
    exp = _load(config, seed, trials, extra)
    try:
        path = cmd_sweep(exp, out_dir or exp.out)
    except (ConfigError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"summary: {path}")


if __name__ == "__main__":  # pragma: no cover
    main()
