"""Command-line entry point: ``drmvp <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import io, pipeline
from .lags import LagSpec
from .market_sim import SimConfig


def _load(path) -> dict:
    return io.read_json(path) if path else {}


def _run_config(args, base: dict | None = None) -> pipeline.RunConfig:
    d = dict(base or {})
    if args.out:
        d["out"] = args.out
    if args.seed is not None:
        d["seed"] = args.seed
    return pipeline.RunConfig.from_dict(d)


def cmd_simulate(args):
    cfg = SimConfig.from_dict(_load(args.config)) if args.config else SimConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return pipeline.stage_simulate(cfg, Path(args.out))


def cmd_estimate(args):
    rc = _run_config(args, _load(args.config))
    return pipeline.stage_estimate(args.ticks, Path(args.out), rc.preavg, rc.n_factors,
                                   args.sectors or rc.sectors, args.jobs)


def cmd_invert(args):
    rc = _run_config(args, _load(args.config))
    return pipeline.stage_invert(args.gamma_dir, Path(args.out), rc.clime, args.jobs)


def cmd_fit(args):
    rc = _run_config(args, _load(args.config))
    return pipeline.stage_fit(args.weights, Path(args.out), rc.lag_spec, rc.lasso)


def cmd_predict(args):
    return pipeline.stage_predict(args.weights, args.fit_dir, Path(args.out))


def cmd_backtest(args):
    rc = _run_config(args, _load(args.config))
    window = args.window or rc.window
    return pipeline.stage_backtest(args.weights, Path(args.out), rc.lag_spec, rc.lasso, window,
                                   rc.models, args.jobs)


def cmd_eval(args):
    rc = _run_config(args, _load(args.config))
    return pipeline.stage_eval(args.predictions, args.ticks, args.expost, Path(args.out), rc.eval,
                               args.riskfree)


def cmd_acf(args):
    return pipeline.stage_acf(args.weights, Path(args.out), args.max_lag)


def cmd_reproduce(args):
    d = _load(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    for key in ("ms", "ns", "ps", "cells"):
        if key in d and d[key] is not None:
            d[key] = tuple(tuple(x) if isinstance(x, list) else x for x in d[key])
    sc = pipeline.StudyConfig(**d)
    return pipeline.reproduce(args.study, sc, Path(args.out), args.jobs)


def cmd_run(args):
    rc = _run_config(args, _load(args.config))
    manifest = pipeline.run_pipeline(rc, force=args.force, jobs=args.jobs)
    return [Path(rc.out) / f for st in manifest.values() for f in st["outputs"]]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drmvp", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", default=None,
                       help="output directory (run: overrides the config's out; others: default .)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=pipeline.default_jobs())
        p.add_argument("--force", action="store_true", help="re-run unchanged stages")
        p.set_defaults(func=fn)
        return p

    add("simulate", cmd_simulate, "simulate ticks and true volatility")
    p = add("estimate-iv", cmd_estimate, "realized volatility matrices from ticks")
    p.add_argument("--ticks", required=True)
    p.add_argument("--sectors", default=None, help="CSV with asset_id,sector")
    p = add("invert", cmd_invert, "CLIME inverses and realized weights")
    p.add_argument("--gamma-dir", required=True)
    p = add("fit", cmd_fit, "EBIC-tuned LASSO fit on a weight series")
    p.add_argument("--weights", required=True)
    p = add("predict", cmd_predict, "next-day prediction from a stored fit")
    p.add_argument("--weights", required=True)
    p.add_argument("--fit-dir", required=True)
    p = add("backtest", cmd_backtest, "rolling one-day-ahead predictions")
    p.add_argument("--weights", required=True)
    p.add_argument("--window", type=int, default=None)
    p = add("eval", cmd_eval, "score predictions on intraday returns")
    p.add_argument("--predictions", required=True)
    p.add_argument("--ticks", required=True)
    p.add_argument("--expost", required=True, help="weights.csv with ex-post portfolios")
    p.add_argument("--riskfree", default=None, help="CSV with day,rate")
    p = add("acf", cmd_acf, "autocorrelation of normalized weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--max-lag", type=int, default=20)
    p = add("reproduce", cmd_reproduce, "simulation study grids")
    p.add_argument("--study", required=True, choices=pipeline.STUDIES)
    add("run", cmd_run, "end-to-end pipeline from a run configuration")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.out is None and args.command != "run":
        args.out = "."
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        outputs = args.func(args)
    except Exception as exc:  # surface a one-line diagnostic
        if args.verbose:
            raise
        print(f"drmvp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for f in outputs or []:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
