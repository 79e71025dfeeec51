"""
Command-line front end.

    antibunch fock      [--config C] [--out DIR]
    antibunch simulate  --config C [--out DIR] [--seed S] [--threads N]
    antibunch analyze   A.qtag B.qtag [--config C] [--out DIR] [--threads N]
    antibunch reproduce [SCENARIO] [--config C] [--out DIR] [--seed S] [--threads N]

Exit status is 0 on success, 1 when the inputs fail validation and 2 when
a run fails.
"""

import argparse
import dataclasses
import sys

from .config import REPRODUCE_SCENARIOS, RunConfig, load_config
from .errors import ConfigError, ParameterError, TagFileError
from .scenarios import analyze_streams, run_fock_sweep, run_reproduce, run_simulate, write_simulation
from .tagfile import read_tags

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=_u64, help="RNG seed (overrides source.seed)")
    common.add_argument("--threads", type=_positive, default=1, help="worker threads")

    parser = argparse.ArgumentParser(prog="antibunch", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fock", parents=[common], help="single-mode g2 sweep")
    sub.add_parser("simulate", parents=[common], help="simulate a source and write tag files")
    p = sub.add_parser("analyze", parents=[common], help="correlate two tag files")
    p.add_argument("tags_a")
    p.add_argument("tags_b")
    p = sub.add_parser("reproduce", parents=[common], help="run an end-to-end scenario")
    p.add_argument("scenario", nargs="?", choices=REPRODUCE_SCENARIOS)
    return parser


def _config(args, scenario):
    if args.config:
        cfg = load_config(args.config)
        if scenario is not None and cfg.scenario != scenario:
            raise ConfigError(f"config scenario {cfg.scenario!r} does not match command {args.command!r}")
    elif scenario == "simulate":
        raise ConfigError("simulate requires --config with a 'source' field")
    elif scenario is None:
        raise ConfigError("reproduce requires a scenario name or --config")
    else:
        cfg = RunConfig(scenario)
    if args.seed is not None:
        if isinstance(cfg.source, dict) or cfg.source is None:
            cfg = dataclasses.replace(cfg, source={**(cfg.source or {}), "seed": args.seed})
        else:
            cfg = dataclasses.replace(cfg, source=cfg.source.replace(seed=args.seed))
    return cfg


def _out(args, cfg):
    return args.out or cfg.output_dir


def run(args) -> int:
    if args.command == "fock":
        cfg = _config(args, "fock_sweep")
        report = run_fock_sweep(cfg)
        report.write(_out(args, cfg))
    elif args.command == "simulate":
        cfg = _config(args, "simulate")
        report, streams = run_simulate(cfg, threads=args.threads)
        write_simulation(report, streams, _out(args, cfg))
    elif args.command == "analyze":
        cfg = _config(args, "analyze") if args.config else RunConfig("analyze")
        a, b = read_tags(args.tags_a), read_tags(args.tags_b)
        report = analyze_streams(a, b, cfg.analysis, threads=args.threads)
        report.write(_out(args, cfg))
    else:
        scenario = args.scenario
        if args.config:
            cfg = _config(args, None)
            scenario = scenario or cfg.scenario
            if args.scenario and cfg.scenario != args.scenario:
                raise ConfigError(f"config scenario {cfg.scenario!r} does not match {args.scenario!r}")
        else:
            cfg = _config(args, scenario)
        report = run_reproduce(cfg, scenario, threads=args.threads)
        report.write(_out(args, cfg))
    status = "PASS" if report.passed else "FAIL"
    print(f"{report.scenario}: {status} ({len(report.summary.get('checks', {}))} checks) -> {_out(args, cfg)}")
    for name, check in report.summary.get("checks", {}).items():
        print(f"  [{'ok' if check['pass'] else 'FAIL'}] {name}: {check['value']!r} vs {check['threshold']!r}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors are validation errors
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    try:
        return run(args)
    except (ConfigError, ParameterError, TagFileError, FileNotFoundError) as exc:
        print(f"antibunch: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any failed run maps to one status
        print(f"antibunch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
