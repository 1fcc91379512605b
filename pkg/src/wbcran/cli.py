"""Command-line entry points: ``solve``, ``campaign`` and ``verify``."""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import yaml

from .ccp import CcpOptions, Mode, SolveStatus, solve_instance
from .harness import CampaignSpec, cell_seed, load_config, run_campaign
from .scenario import CacheStrategy, build_instance, instance_to_json
from .verify import OracleError, brute_force_small, comparison_rows, iterative_tightening


def _read_config(path):
    """YAML mapping of SystemConfig keys, plus optional ``preset``, ``requests`` and ``ccp``."""
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    ccp = CcpOptions(**data.pop("ccp", {}))
    requests = data.pop("requests", None)
    return load_config(data), ccp, requests


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Power minimization for cache-enabled C-RAN with wireless backhaul."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--mode", type=click.Choice([m.value for m in Mode]), default="proposed",
              show_default=True)
@click.option("--strategy", type=click.Choice([s.value for s in CacheStrategy]), default="popc",
              show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def solve(config, seed, mode, strategy, out):
    """Solve one seeded instance and write solution, trace and instance files."""
    cfg, opts, requests = _read_config(config)
    inst = build_instance(cfg, seed, strategy, requests)
    sol = solve_instance(inst, mode, opts, seed=cell_seed(seed, 0, strategy, mode) % (2 ** 31))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "instance.json").write_text(instance_to_json(inst))
    _write_json(out / "solution.json", sol.to_dict())
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "iteration", "objective", "max_slack", "min_sinr_gap"])
        for rec in sol.trace:
            w.writerow(rec.csv_row())
    click.echo(f"{sol.status.value}: total power {sol.power.total:.6g} W, "
               f"{sol.iterations} iterations, {sol.backhauled_groups} backhauled groups")


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--workers", type=int, default=None, help="Override the worker count of the spec.")
def campaign(spec_path, out, workers):
    """Run a Monte-Carlo campaign and write CSV/JSON artifacts."""
    spec = CampaignSpec.from_yaml(spec_path)
    if workers is not None:
        spec.workers = workers
    summary = run_campaign(spec, out)
    for key, cell in summary["cells"].items():
        mean = cell.get("mean_total_power", float("nan"))
        click.echo(f"{key}: {cell['trials']} trials {cell['status']} mean power {mean:.6g} W")
    if summary["errors"]:
        click.echo(f"{summary['errors']} trial(s) errored", err=True)
        sys.exit(1)


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--strategy", type=click.Choice([s.value for s in CacheStrategy]), default="popc",
              show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def verify(config, seed, strategy, out):
    """Compare the CCP solution against the exhaustive oracle on a small instance."""
    cfg, opts, requests = _read_config(config)
    inst = build_instance(cfg, seed, strategy, requests)
    try:
        oracle = brute_force_small(inst)
    except OracleError as exc:
        raise click.ClickException(str(exc))
    sol = solve_instance(inst, Mode.PROPOSED, opts, seed=seed)
    ok = True
    row = comparison_rows(seed, sol.power.total, oracle)
    if oracle.feasible:
        ok &= sol.status is not SolveStatus.INFEASIBLE
        ok &= sol.power.total >= oracle.lower_bound - 1e-6
        if sol.status is not SolveStatus.INFEASIBLE:
            try:
                ok &= iterative_tightening(sol.beamformers, inst).residual_gap <= 1e-6
            except OracleError as exc:
                click.echo(f"tightening failed: {exc}", err=True)
                ok = False
    elif sol.status is not SolveStatus.INFEASIBLE:
        # randomization found nothing; the CCP point must still respect the relaxation
        ok &= sol.power.total >= oracle.lower_bound - 1e-6
    click.echo(f"ccp {sol.status.value} power {sol.power.total:.6g} | oracle lower "
               f"{oracle.lower_bound:.6g} upper {oracle.upper_bound:.6g} | ratio {row[-1]}")
    if out is not None:
        outp = Path(out)
        outp.mkdir(parents=True, exist_ok=True)
        (outp / "oracle.json").write_text(oracle.to_json())
        with open(outp / "comparison.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "ccp_power", "lower_bound", "upper_bound", "ratio"])
            w.writerow(row)
    if not ok:
        click.echo("oracle check FAILED", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
