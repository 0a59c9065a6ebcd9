"""Command line interface.

    xaiagree run CONFIG            full pipeline
    xaiagree train CONFIG          data + training + AUC profile
    xaiagree explain CONFIG        attributions for every snapshot
    xaiagree agree CONFIG          agreement metrics, heatmaps, boxplot data
    xaiagree correlate CONFIG      Spearman rho between agreement and AUC
    xaiagree synth --out data.csv  write a synthetic two-class dataset
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import dataset as ds
from . import experiment as exp
from .io import write_csv

log = logging.getLogger("xaiagree")

STAGES = ("run", "train", "explain", "agree", "correlate")


def _overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--k", type=int, help="restrict to a single top-k value")
    p.add_argument("--metric", action="append", choices=["FA", "SA", "RA", "SRA"],
                   help="restrict to this metric (repeatable)")
    p.add_argument("--methods", help="comma-separated attribution methods")
    p.add_argument("--jobs", type=int, help="worker threads for the explain stage")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xaiagree",
        description="Feature-attribution agreement versus model AUC across epochs.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        _overrides(sub.add_parser(name, help=f"{name} stage" if name != "run" else "full pipeline"))
    synth = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    synth.add_argument("--n", type=int, default=400)
    synth.add_argument("--K", type=int, default=12)
    synth.add_argument("--separation", type=float, default=6.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="CSV path")
    return parser


def _load_config(args) -> exp.ExperimentConfig:
    cfg = exp.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    elif not Path(cfg.output_dir).is_absolute():
        cfg.output_dir = str(Path(cfg.base_dir) / cfg.output_dir)
    if args.k is not None:
        cfg.k_range = [args.k, args.k]
    if args.metric:
        cfg.metrics = list(dict.fromkeys(args.metric))
    if args.methods:
        cfg.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.jobs is not None:
        cfg.n_jobs = args.jobs
    if args.no_figures:
        cfg.figures = False
    cfg.validate()
    return cfg


def _print_correlations(reports) -> None:
    for r in reports:
        if r.rho is None:
            note = "constant agreement" if r.status == "undefined" else r.status
            print(f"{r.metric}\tk={r.k}\trho=undefined ({note})\tn_epochs={r.n_epochs}")
        else:
            print(f"{r.metric}\tk={r.k}\trho={r.rho:.4f}\tn_epochs={r.n_epochs}")


def _synth(args) -> int:
    data = ds.synthetic_blobs(args.n, args.K, args.separation, args.seed)
    rows = ([*row, int(label)] for row, label in zip(data.features, data.labels))
    write_csv(args.out, (*data.feature_names, "label"), rows)
    print(args.out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth":
        try:
            return _synth(args)
        except (ds.DataError, OSError) as exc:
            print(f"xaiagree: error: {exc}", file=sys.stderr)
            return 1

    try:
        cfg = _load_config(args)
    except exp.ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"xaiagree: error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "run":
            report = exp.run_experiment(cfg)
            out = exp.emit_outputs(report)
            for notice in report.notices:
                print(f"notice: {notice}", file=sys.stderr)
            _print_correlations(report.correlations)
        elif args.command == "train":
            out = exp.stage_train(cfg)
        elif args.command == "explain":
            out = exp.stage_explain(cfg)
        elif args.command == "agree":
            if len(cfg.methods) < 2:
                print("notice: only one method configured: no pairs, agreement skipped",
                      file=sys.stderr)
            out = exp.stage_agree(cfg)
        else:
            out, reports = exp.stage_correlate(cfg)
            _print_correlations(reports)
    except exp.ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"xaiagree: error: {exc}", file=sys.stderr)
        return 2
    except (exp.PipelineError, OSError) as exc:
        print(f"xaiagree: error: {exc}", file=sys.stderr)
        return 1
    log.info("outputs in %s", out)
    return 0
