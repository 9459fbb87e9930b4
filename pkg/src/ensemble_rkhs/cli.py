"""Command line entry point: ``ensemble-rkhs run|sweep|presets``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from ensemble_rkhs.errors import ConfigError, NumericalError
from ensemble_rkhs.experiments import bundled_configs, load_config, run_experiment, sweep_sample_size
from ensemble_rkhs.presets import PRESETS

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _prepare(args):
    cfg = load_config(args.config)
    if args.paper_scale:
        cfg = cfg.with_paper_scale()
    if args.seed is not None:
        cfg.signals.seed = args.seed
        cfg.betas.seed = args.seed
        if cfg.sweep is not None:
            cfg.sweep.seed = args.seed
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def _cmd_run(args) -> int:
    cfg = _prepare(args)
    out = Path(args.out or cfg.output_dir)
    report = run_experiment(cfg, out, threads=args.threads)
    print(f"{cfg.name}: {report['mode']} finished, wrote {out / 'report.json'}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _prepare(args)
    if args.sizes is not None and any(i < 2 for i in args.sizes):
        raise ConfigError("--sizes must all be >= 2")
    if args.repeats is not None and args.repeats < 1:
        raise ConfigError("--repeats must be >= 1")
    try:
        rows = sweep_sample_size(cfg, args.sizes, args.repeats)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["I", "mean_h", "std_h", "threshold", "accept_fraction"])
        for r in rows:
            w.writerow([r["I"], repr(r["mean_h"]), repr(r["std_h"]), repr(r["threshold"]),
                        repr(r["accept_fraction"])])
    print(f"{cfg.name}: sweep over {len(rows)} sizes, wrote {out / 'sweep.csv'}")
    return EXIT_OK


def _cmd_presets(args) -> int:
    if args.action == "list":
        for name, entry in PRESETS.items():
            print(f"{name:10s} {entry['observation']:9s} {entry['description']}")
    else:
        for name in bundled_configs():
            print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ensemble-rkhs", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="path to a JSON config or name of a bundled config")
        sp.add_argument("--seed", type=int, default=None, help="override signal and index-point seeds")
        sp.add_argument("--paper-scale", action="store_true", help="use the published sample sizes")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=1)

    run = sub.add_parser("run", help="run an experiment config")
    common(run)
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="MMD against sample size on one master set")
    common(sweep)
    sweep.add_argument("--sizes", type=int, nargs="+", default=None)
    sweep.add_argument("--repeats", type=int, default=None)
    sweep.set_defaults(func=_cmd_sweep)

    pr = sub.add_parser("presets", help="list named systems or bundled configs")
    pr.add_argument("action", choices=["list", "configs"])
    pr.set_defaults(func=_cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
