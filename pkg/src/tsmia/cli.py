"""Command-line interface: ``tsmia synth | run | report``."""

from __future__ import annotations

import argparse
import pathlib
import sys

from . import pipeline
from .config import ConfigError, load_config
from .data import generate_population, write_csv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsmia",
        description="Membership-inference privacy auditing for time-series forecasters",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic population CSV")
    synth.add_argument("--config", required=True, help="experiment config file")
    synth.add_argument("--out", required=True, help="output CSV path")
    synth.add_argument("--seed", type=int, default=None,
                       help="override the synthetic population seed")

    run = sub.add_parser("run", help="run the full audit pipeline")
    run.add_argument("--config", required=True, help="experiment config file")
    run.add_argument("--seed", type=int, action="append", default=None,
                     help="append a seed to the configured list (repeatable)")
    run.add_argument("--out", default=None, help="override the output directory")
    run.add_argument("--jobs", type=int, default=1, help="parallel shadow workers")

    report = sub.add_parser("report", help="summarize a finished report bundle")
    report.add_argument("bundle", help="bundle directory written by `run`")
    report.add_argument("--csv", default=None, help="also export the table as CSV")
    return parser


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    synth_cfg = cfg.data.synthetic
    if args.seed is not None:
        import dataclasses

        synth_cfg = dataclasses.replace(synth_cfg, seed=args.seed)
    population = generate_population(synth_cfg)
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(population, out)
    print(f"wrote {len(population)} users x {population[0].length} steps to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed:
        import dataclasses

        merged = list(cfg.seeds)
        for seed in args.seed:
            if seed not in merged:
                merged.append(seed)
        cfg = dataclasses.replace(cfg, seeds=tuple(merged))
    out = pipeline.run_experiment(cfg, out_dir=args.out, jobs=max(1, args.jobs))
    _, _, summary = pipeline.load_bundle(out)
    print(f"bundle written to {out}")
    print(pipeline.format_summary_table(summary))
    return 0


def cmd_report(args) -> int:
    _, reports, summary = pipeline.load_bundle(args.bundle)
    labels = {
        key: entry.get("label", key)
        for report in reports
        for key, entry in report["attacks"].items()
    }
    print(pipeline.format_summary_table(summary, labels))
    if args.csv:
        pipeline.write_summary_csv(summary, args.csv)
        print(f"csv written to {args.csv}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "run":
            return cmd_run(args)
        return cmd_report(args)
    except (ConfigError, pipeline.PipelineError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
