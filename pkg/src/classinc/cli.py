"""Command line entry point.

    classinc run --config exp.toml [--seed N] [--output DIR] [--preset NAME] [--override k=v ...]
    classinc analyze RUN_DIR
    classinc plot RUN_DIR
    classinc preset-list

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import config as cfgmod
from .errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="classinc", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an incremental experiment")
    run.add_argument("--config", help="TOML experiment config")
    run.add_argument("--seed", type=int, help="global seed (overrides the config)")
    run.add_argument("--output", help="run directory (overrides the config)")
    run.add_argument("--preset", help="variation preset; without --config uses the desk benchmark")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="set a config key, e.g. train.epochs=10 (repeatable)")
    run.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    an = sub.add_parser("analyze", help="recompute the summary of a finished run")
    an.add_argument("run_dir")
    pl = sub.add_parser("plot", help="render norm and confusion figures of a run")
    pl.add_argument("run_dir")
    sub.add_parser("preset-list", help="list variation presets")
    return p


def resolve_config(args) -> cfgmod.ExperimentConfig:
    if args.config:
        cfg = cfgmod.parse_config(args.config)
        if args.preset:
            cfg = cfgmod.apply_overrides(cfg, [f'preset="{args.preset}"'])
    elif args.preset:
        try:
            cfg = cfgmod.preset(args.preset)
        except ValueError as e:
            raise ConfigError("preset", str(e)) from None
    else:
        raise ConfigError("config", "give --config or --preset")
    if args.override:
        cfg = cfgmod.apply_overrides(cfg, args.override)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.output:
        cfg = dataclasses.replace(cfg, output=args.output)
    if not cfg.output:
        raise ConfigError("output", "no run directory; set `output` in the config or pass --output")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import runs

    try:
        if args.command == "preset-list":
            for name, spec in cfgmod.VARIATION_PRESETS.items():
                flags = " ".join(f"{k}={v}" for k, v in dataclasses.asdict(spec).items())
                print(f"{name:12s} {cfgmod.PRESET_DESCRIPTIONS[name]:32s} {flags}")
        elif args.command == "run":
            cfg = resolve_config(args)
            result = runs.execute(cfg, cfg.output, plots=not args.no_plots)
            print(result.summary.render())
        elif args.command == "analyze":
            summary = runs.analyze(args.run_dir)
            print(summary.render())
        elif args.command == "plot":
            for path in runs.render_figures(args.run_dir):
                print(path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - every other failure is a runtime error
        if args.verbose:
            logging.exception("run failed")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
