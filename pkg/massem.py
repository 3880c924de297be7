#!/usr/bin/env python3
"""
massem - mass-adaptive Hamiltonian samplers with Monte Carlo EM
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from config import (ConfigurationError, ensure_user_default, get_config_info,
                    load_experiment_config, override_layer, parse_override_args)
import harness
from sampling.errors import SamplerDivergence, SamplingError

logger = logging.getLogger("massem")

EPILOG = """Examples:
  %(prog)s run --config ./massem.yaml
  %(prog)s run --sampler sgnht-em --eps 0.001 --s_count 300 --output_dir runs/x
  %(prog)s replicate-table1 --seeds 1,2,3,4,5 --out runs/table1 --jobs 4
  %(prog)s replicate-table2 --seeds 1,2,3 --out runs/table2 --samplers sgnht,sgnht-em
  %(prog)s replicate-table3 --seeds 1,2,3 --out runs/table3 --datasets australian.csv,heart.csv
  %(prog)s check --config ./massem.yaml
  %(prog)s init-config
  %(prog)s --config-info

Configuration Resolution:
  1. Explicit --config argument (absolute or relative paths supported)
  2. MASSEM_CONFIG environment variable
  3. Platform-specific user config directory:
     - Linux: ~/.config/massem/massem.yaml
     - macOS: ~/Library/Application Support/massem/massem.yaml
     - Windows: %%APPDATA%%/massem/massem.yaml
  4. Current directory: ./massem.yaml or ./massem.json
  5. Packaged defaults

Any configuration key can be overridden after the subcommand, e.g.
  --eps 0.001 --n_leapfrog 20 --sampler hmc --batch_size null

Exit codes: 0 success, 1 validation error, 2 sampler divergence, 3 failed check.
"""


def configure_logging(level_name: Optional[str] = None):
    """--log-level wins over LOG_LEVEL; DEBUG=1 forces debug output."""
    if os.environ.get("DEBUG") == "1":
        level_name = "DEBUG"
    level_name = (level_name or os.environ.get("LOG_LEVEL") or "INFO").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s: %(message)s')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="massem",
        allow_abbrev=False,
        description="massem - mass-adaptive HMC, SGHMC, SGNHT and SG-NPHMC with Monte Carlo EM",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    parser.add_argument("--config-info", action="store_true",
                        help="Show configuration resolution details and exit")
    parser.add_argument("--log-level", metavar="LEVEL",
                        help="Logging level (DEBUG, INFO, WARNING, ERROR); defaults to LOG_LEVEL or INFO")
    sub = parser.add_subparsers(dest="command")

    config_help = ("Path to configuration file (YAML or JSON). If not specified, uses "
                   "MASSEM_CONFIG or searches standard locations.")

    run_p = sub.add_parser("run", allow_abbrev=False, help="Run one sampler and write trace.csv and summary.json")
    run_p.add_argument("--config", type=str, metavar="PATH", help=config_help)

    check_p = sub.add_parser("check", allow_abbrev=False, help="Run the numerical verification suite")
    check_p.add_argument("--config", type=str, metavar="PATH", help=config_help)

    for name, text in (("replicate-table1", "Gaussian mean/precision sampler comparison"),
                       ("replicate-table2", "Synthetic Bayesian logistic regression comparison"),
                       ("replicate-table3", "Per-epoch runtimes on logistic regression datasets")):
        rep = sub.add_parser(name, allow_abbrev=False, help=text)
        rep.add_argument("--config", type=str, metavar="PATH", help=config_help)
        rep.add_argument("--seeds", required=True, help="Comma-separated seeds (at least 3)")
        rep.add_argument("--out", required=True, metavar="DIR", help="Output directory")
        rep.add_argument("--samplers", help="Comma-separated sampler kinds to include")
        rep.add_argument("--jobs", type=int, default=1, help="Parallel worker processes")
        rep.add_argument("--epochs", type=int, help="Override the number of epochs")
        rep.add_argument("--burn-in", type=int, dest="burn_in", help="Override the burn-in")
        if name == "replicate-table3":
            rep.add_argument("--datasets", metavar="CSV[,CSV...]",
                             help="CSV files timed in addition to the synthetic data")
            rep.add_argument("--label-column", type=int, default=-1, dest="label_column",
                             help="Label column of the CSV files (default: last)")

    sub.add_parser("init-config", help="Write the commented template to the user config directory")
    return parser


def _print_config_info(cli_arg: Optional[str]):
    info = get_config_info(cli_arg)
    print("Configuration Resolution Info:")
    print(f"Platform: {info['platform']}")
    print(f"Platform config dir: {info['platform_config_dir']}")
    print(f"Environment variable: {info['environment_variable']}")
    print(f"CLI argument: {info['cli_argument']}")
    print(f"User config exists: {info['user_config_exists']}")
    print(f"Resolved path: {info['resolved_path']}")
    print(f"Config exists: {info['config_exists']}")
    if info['error']:
        print(f"Error: {info['error']}")
    print("\nSearch paths:")
    for path in info['search_paths']:
        exists = Path(path).exists()
        print(f"  {'✓' if exists else '✗'} {path}")


def _parse_seeds(text: str) -> List[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"Seeds must be comma-separated integers, got '{text}'")


def _fail(error: BaseException, exit_code: int, output_dir: Optional[Path]) -> int:
    payload = harness.write_error(output_dir, error, exit_code)
    print(f"Error: {error}", file=sys.stderr)
    if output_dir is None:
        print(json.dumps(payload), file=sys.stderr)
    return exit_code


def _cmd_run(args, overrides) -> int:
    config_path, cfg = load_experiment_config(args.config, overrides)
    logger.info(f"Using configuration file: {config_path}")
    result = harness.run(cfg)
    if result.exit_code == harness.EXIT_OK:
        print(f"Artifacts written to {result.output_dir}")
    else:
        print(f"Sampler diverged at epoch {result.summary['failure_epoch']}: "
              f"{result.summary['failure_message']}", file=sys.stderr)
    return result.exit_code


def _cmd_check(args, overrides) -> int:
    config_path, cfg = load_experiment_config(args.config, overrides)
    logger.info(f"Using configuration file: {config_path}")
    results = harness.check(cfg)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status}  {r.name:<18} value={r.value} want {r.threshold}"
        if r.message:
            line += f"  ({r.message})"
        print(line)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} properties failed", file=sys.stderr)
        return harness.EXIT_CHECK_FAILED
    return harness.EXIT_OK


def _replicate_layers(args, overrides):
    """Config-file values below the table settings, --key overrides above them."""
    base = {}
    if args.config:
        _, cfg = load_experiment_config(args.config)
        base = {"model": dict(cfg.model), "dynamics": dict(cfg.dynamics), "mcem": dict(cfg.mcem)}
    return base, override_layer(overrides)


def _print_orderings(orderings):
    for name, result in orderings.items():
        if result is None:
            continue
        if "holds" not in result:
            for eps, matched in result.items():
                if matched is not None:
                    print(f"ordering {name} at eps={eps}: "
                          f"{'holds' if matched['holds'] else 'does not hold'} "
                          f"({matched['seeds_holding']}/{matched['seeds_compared']} seeds)")
            continue
        print(f"ordering {name}: {'holds' if result['holds'] else 'does not hold'} "
              f"({result['seeds_holding']}/{result['seeds_compared']} seeds)")


def _cmd_replicate(args, overrides) -> int:
    seeds = _parse_seeds(args.seeds)
    base, explicit = _replicate_layers(args, overrides)
    samplers = [s.strip() for s in args.samplers.split(",")] if args.samplers else None
    common = dict(samplers=samplers, jobs=args.jobs, epochs=args.epochs, burn_in=args.burn_in,
                  base=base, overrides=explicit)

    if args.command == "replicate-table3":
        datasets = [d.strip() for d in args.datasets.split(",") if d.strip()] \
            if args.datasets else []
        report = harness.replicate_table3(seeds, Path(args.out), datasets=datasets,
                                          label_column=args.label_column, **common)
        for dataset, table in report["samplers"].items():
            print(f"[{dataset}]")
            for sampler, row in table.items():
                ms = row["ms_per_epoch"]
                timing = "no successful runs" if ms is None else f"{ms:.3f} ms/epoch"
                print(f"  {sampler:<12} {timing}  (ok={row['runs_ok']}, failed={row['runs_failed']})")
        print(f"Report written to {Path(args.out) / 'report.json'}")
        return harness.EXIT_OK

    replicate = harness.replicate_table1 if args.command == "replicate-table1" \
        else harness.replicate_table2
    report = replicate(seeds, Path(args.out), **common)

    for sampler, row in report["samplers"].items():
        metrics = ", ".join(f"{k}={v:.4g}" for k, v in row.items()
                            if k.startswith("rmse_") and v is not None)
        print(f"{sampler:<12} {metrics or 'no successful runs'}  "
              f"(ok={row['runs_ok']}, failed={row['runs_failed']})")
    _print_orderings(report["orderings"])
    print(f"Report written to {Path(args.out) / 'report.json'}")
    return harness.EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    configure_logging(args.log_level)

    if args.config_info:
        _print_config_info(getattr(args, "config", None))
        return harness.EXIT_OK
    if args.command is None:
        parser.print_help()
        return harness.EXIT_VALIDATION

    output_dir = None
    try:
        overrides = parse_override_args(extra)
        if args.command == "init-config":
            if overrides:
                raise ConfigurationError("init-config takes no overrides")
            print(f"User configuration: {ensure_user_default()}")
            return harness.EXIT_OK
        if "output_dir" in overrides:
            output_dir = Path(overrides["output_dir"]).expanduser()
        if args.command == "run":
            return _cmd_run(args, overrides)
        if args.command == "check":
            return _cmd_check(args, overrides)
        output_dir = Path(args.out)
        return _cmd_replicate(args, overrides)
    except ConfigurationError as e:
        return _fail(e, harness.EXIT_VALIDATION, output_dir)
    except SamplerDivergence as e:
        return _fail(e, harness.EXIT_DIVERGENCE, output_dir)
    except (SamplingError, ValueError, OSError) as e:
        return _fail(e, harness.EXIT_VALIDATION, output_dir)
    except KeyboardInterrupt:
        print("\nInterrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
