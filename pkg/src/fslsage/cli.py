"""Command line: ``fslsage run CONFIG OUTDIR`` and ``fslsage sweep CONFIG SWEEPSPEC OUTDIR``.

A sweep spec is an INI file::

    [grid]
    l = 2; 5; 10
    algorithm = fsl_sage; cse_fsl

    [target]
    accuracy = 0.9

Grid values are separated by ``;`` (commas belong to list-valued fields such as
``aux_dims``).  Every combination of the grid becomes one run in its own
sub-directory; ``comparison.csv`` collects best accuracy and bytes-to-target.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .baselines import simulate
from .metrics import CommLedger, bytes_to_target, run_summary, write_metrics_csv, \
    write_summary_json
from .numcore import ConfigurationError

log = logging.getLogger("fslsage")

COMPARISON_COLUMNS = ("point", "best_accuracy", "bytes_to_target", "total_bytes", "rounds")


def execute(config: cfgmod.RunConfig, outdir) -> dict:
    """Run one configuration and write metrics.csv, summary.json and config.ini."""
    config.validate()
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfgmod.emit(config), encoding="utf-8")
    ledger = CommLedger()
    rows = simulate(config, ledger)
    write_metrics_csv(rows, out / "metrics.csv")
    summary = run_summary(_echo(config), rows, ledger)
    write_summary_json(summary, out / "summary.json")
    return {"rows": rows, "summary": summary}


def _echo(config):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(cfgmod.emit(config))
    return {s: dict(cp[s]) for s in cp.sections()}


def read_sweep_spec(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read(path, encoding="utf-8")
    if "grid" not in cp or not cp["grid"]:
        raise ConfigurationError("sweep spec has an empty grid")
    grid = {}
    for name, raw in cp["grid"].items():
        if name not in cfgmod._FIELD_TYPES:
            raise ConfigurationError(f"unknown parameter {name!r} in sweep grid")
        values = [v.strip() for v in raw.split(";") if v.strip()]
        if not values:
            raise ConfigurationError(f"sweep axis {name!r} has no values")
        grid[name] = values
    target = None
    if "target" in cp and "accuracy" in cp["target"]:
        target = float(cp["target"]["accuracy"])
    return grid, target


def grid_points(base: cfgmod.RunConfig, grid: dict):
    names = list(grid)
    for combo in itertools.product(*(grid[n] for n in names)):
        cfg = base
        for n, v in zip(names, combo):
            cfg = cfgmod.set_field(cfg, n, v)
        label = "_".join(f"{n}={v.replace(',', '-').replace(' ', '')}" for n, v in zip(names, combo))
        yield label, cfg.validate()


def _run_point(args):
    cfg, outdir = args
    return execute(cfg, outdir)["rows"]


def sweep(base: cfgmod.RunConfig, spec_path, outdir, jobs: int = 1) -> list[dict]:
    grid, target = read_sweep_spec(spec_path)
    points = list(grid_points(base, grid))
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, out / f"{k:03d}_{label}") for k, (label, cfg) in enumerate(points)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            all_rows = list(pool.map(_run_point, tasks))
    else:
        all_rows = [_run_point(t) for t in tasks]
    table = []
    for (label, _), rows in zip(points, all_rows):
        table.append({
            "point": label,
            "best_accuracy": max(r.eval_accuracy for r in rows),
            "bytes_to_target": "" if target is None else (bytes_to_target(rows, target) or ""),
            "total_bytes": rows[-1].cumulative_bytes,
            "rounds": len(rows),
        })
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, COMPARISON_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(table)
    return table


def _load(path, seed_override):
    cfg = cfgmod.load(path)
    if seed_override is not None:
        s = seed_override
        cfg = replace(cfg, seed_dataset=s, seed_partition=s + 1, seed_init=s + 2,
                      seed_streams=s + 3)
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fslsage", description=__doc__.splitlines()[0])
    p.add_argument("--seed-override", type=int, default=None,
                   help="replace the dataset/partition/init/stream seeds with N, N+1, N+2, N+3")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute one configuration")
    r.add_argument("config")
    r.add_argument("outdir")
    s = sub.add_parser("sweep", help="execute a grid of configurations")
    s.add_argument("config")
    s.add_argument("sweepspec")
    s.add_argument("outdir")
    s.add_argument("--jobs", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        cfg = _load(args.config, args.seed_override)
        if args.command == "run":
            res = execute(cfg, args.outdir)
            s = res["summary"]
            log.info("%s: %d rounds, best accuracy %.4f, %d bytes", cfg.algorithm,
                     s["rounds"], s["best_accuracy"], s["total_bytes"])
        else:
            table = sweep(cfg, args.sweepspec, args.outdir, args.jobs)
            for row in table:
                log.info("%s: best %.4f, bytes-to-target %s", row["point"],
                         row["best_accuracy"], row["bytes_to_target"])
    except (ConfigurationError, OSError, configparser.Error) as exc:
        print(f"fslsage: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
