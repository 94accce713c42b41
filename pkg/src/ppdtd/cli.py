"""Command line entry point.

Verbs:
  run       execute the configured variants at the configured operating point
  sweep     staged grid search over step and momentum scales
  oracle    print exact-solution diagnostics and write oracle_report.json
  validate  schema check plus a dry build of the configured problem

Exit codes: 0 success, 2 invalid configuration, 3 completed with diverged
runs and no other failure, 4 input/output failure.
"""

from __future__ import annotations

import json
import os
import sys

import click

from . import experiment
from .config import parse_config
from .errors import ConfigError, IoFailure, PpdtdError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _read_document(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        click.echo(f"error: cannot read config {path}: {exc}", err=True)
        sys.exit(EXIT_IO)
    except json.JSONDecodeError as exc:
        click.echo(f"error: config is not valid JSON: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _merge_overrides(document: dict, seed, out, stride) -> dict:
    if seed is not None:
        document["master_seed"] = seed
    if out is not None:
        document.setdefault("output", {})["directory"] = out
    if stride is not None:
        document.setdefault("metrics", {})["stride"] = stride
    return document


def _configure(config_path: str, seed, out, stride):
    document = _merge_overrides(_read_document(config_path), seed, out, stride)
    try:
        return parse_config(document)
    except ConfigError as exc:
        for message in exc.errors:
            click.echo(f"config error: {message}", err=True)
        sys.exit(EXIT_CONFIG)


def _finish(summary: dict):
    out_dir = summary.get("output_directory", "")
    for warning in summary.get("spectral_warnings", []):
        click.echo(f"warning: {warning}", err=True)
    completed = sum(1 for u in summary["units"] if u["status"] == "completed")
    diverged = len(summary["units"]) - completed
    click.echo(
        f"{summary['verb']}: {completed} run(s) completed, {diverged} diverged; "
        f"artifacts under {out_dir}"
    )
    if summary["any_diverged"]:
        click.echo("error: at least one run diverged", err=True)
        sys.exit(EXIT_DIVERGED)


def _shared_options(fn):
    fn = click.option("--svg", is_flag=True,
                      help="Render SVG charts next to the PNGs.")(fn)
    fn = click.option("--stride", type=click.IntRange(min=1), default=None,
                      help="Override the sparse recording stride.")(fn)
    fn = click.option("--workers", type=click.IntRange(min=1), default=1,
                      show_default=True, help="Worker processes for the runs.")(fn)
    fn = click.option("--out", type=click.Path(), default=None,
                      help="Override the output directory.")(fn)
    fn = click.option("--seed", type=click.IntRange(min=0), default=None,
                      help="Override the master seed.")(fn)
    return fn


@click.group()
def main():
    """Deterministic simulator for networked TD(0) policy evaluation."""


@main.command()
@click.argument("config_path", type=click.Path())
@_shared_options
def run(config_path, seed, out, workers, stride, svg):
    """Run every configured variant at the configured operating point."""
    config = _configure(config_path, seed, out, stride)
    try:
        summary = experiment.run_experiment(config, workers=workers, svg=svg)
    except IoFailure as exc:
        click.echo(f"error: {exc} [{exc.path}]", err=True)
        sys.exit(EXIT_IO)
    except PpdtdError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    summary["output_directory"] = config.output_directory
    _finish(summary)


@main.command()
@click.argument("config_path", type=click.Path())
@_shared_options
def sweep(config_path, seed, out, workers, stride, svg):
    """Grid-search step and momentum scales, then report the best points."""
    config = _configure(config_path, seed, out, stride)
    try:
        summary = experiment.run_sweep(config, workers=workers, svg=svg)
    except ConfigError as exc:
        for message in exc.errors:
            click.echo(f"config error: {message}", err=True)
        sys.exit(EXIT_CONFIG)
    except IoFailure as exc:
        click.echo(f"error: {exc} [{exc.path}]", err=True)
        sys.exit(EXIT_IO)
    except PpdtdError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    for variant, chosen in summary["selection"].items():
        if chosen.get("status") == "ok":
            click.echo(
                f"{variant}: best step scale {chosen['best_step_scale']:g}, "
                f"best momentum scale {chosen['best_beta_scale']:g}, "
                f"final value error {chosen['final_td_error']:.6e}"
            )
        else:
            click.echo(f"{variant}: every swept point diverged")
    summary["output_directory"] = config.output_directory
    _finish(summary)


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--out", type=click.Path(), default=None,
              help="Override the output directory.")
def oracle(config_path, out):
    """Solve the configured problem exactly and print its diagnostics."""
    config = _configure(config_path, None, out, None)
    try:
        report = experiment.oracle_report(config)
    except IoFailure as exc:
        click.echo(f"error: {exc} [{exc.path}]", err=True)
        sys.exit(EXIT_IO)
    except PpdtdError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    solution = report["solution"]
    constants = report["constants"]
    click.echo(f"states: {report['num_states']}  agents: {report['num_agents']}  "
               f"joint actions: {report['num_joint_actions']}")
    click.echo("fixed point: "
               + " ".join(f"{v:.12e}" for v in solution["fixed_point"]))
    click.echo(f"feature gram floor: {solution['gram_floor']:.12e}")
    click.echo(f"drift symmetric max eigenvalue: "
               f"{solution['drift_symmetric_max_eig']:.12e}")
    click.echo(f"sampling noise second moment: "
               f"{solution['noise_second_moment']:.12e}")
    click.echo(f"step ceiling: {constants['step_ceiling']:.12e}")
    click.echo(f"momentum ratio floor: {constants['ratio_floor']:.12e}")
    for warning in report["spectral"]["warnings"]:
        click.echo(f"warning: {warning}", err=True)

    out_dir = config.output_directory
    path = os.path.join(out_dir, "oracle_report.json")
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(report, handle, indent=2, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        click.echo(f"error: cannot write {path}: {exc}", err=True)
        sys.exit(EXIT_IO)
    click.echo(f"report written to {path}")


@main.command()
@click.argument("config_path", type=click.Path())
def validate(config_path):
    """Validate a config: schema, cross-field rules, then a dry build."""
    document = _read_document(config_path)
    try:
        config = parse_config(document)
    except ConfigError as exc:
        for message in exc.errors:
            click.echo(f"config error: {message}", err=True)
        click.echo(f"invalid: {len(exc.errors)} problem(s) found", err=True)
        sys.exit(EXIT_CONFIG)
    errors, warnings = experiment.validate_config_deep(config)
    for message in warnings:
        click.echo(f"warning: {message}", err=True)
    if errors:
        for message in errors:
            click.echo(f"config error: {message}", err=True)
        click.echo(f"invalid: {len(errors)} problem(s) found", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo("valid: configuration parses and the problem builds cleanly")


if __name__ == "__main__":
    main()
