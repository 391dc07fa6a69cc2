"""Command-line entry point.

Every config key is also a flag (``--U 16``); flags override the config file,
which overrides the profile. Exit codes: 0 success, 2 configuration error,
3 runtime failure. Output goes under ``$HRCL_OUTPUT_ROOT`` (default ``runs``)
unless ``--out`` is given.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .domain import METHODS, ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
COMMANDS = ("generate", "run", "train", "eval", "oracle", "sweep", "plot-data")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value config file with optional [sections]")
    p.add_argument("--profile", choices=sorted(harness.PROFILES))
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--workers", help="parallel seed processes")
    p.add_argument("--dataset", type=Path, help="directory of agent_<id>.plans files")
    p.add_argument("--out", type=Path, help="output directory")
    group = p.add_argument_group("config keys")
    for name in harness.CONFIG_FIELDS:
        kw = {"choices": METHODS} if name == "method" else {}
        group.add_argument(f"--{name}", dest=f"cfg_{name}", metavar="V", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrcl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "plot-data":
            p.add_argument("directory", type=Path)
            continue
        _add_config_flags(p)
        if name == "eval":
            p.add_argument("--checkpoint", type=Path, required=True)
        if name == "sweep":
            p.add_argument("--param", required=True)
            p.add_argument("--values", required=True, help="comma-separated values")
            p.add_argument("--methods", help="comma-separated methods (default: --method)")
    return parser


def settings_from_args(args) -> harness.Settings:
    file_values = harness.read_config_file(args.config) if args.config else {}
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.workers is not None:
        overrides["workers"] = args.workers
    return harness.resolve_settings(file_values, overrides, args.profile)


def _out(args, default: str) -> Path:
    return args.out if args.out is not None else harness.output_root() / default


def dispatch(args) -> Path:
    if args.command == "plot-data":
        return harness.emit_plot_data(args.directory)
    settings = settings_from_args(args)
    method = settings.config.method
    if args.command == "generate":
        return harness.generate_dataset(settings, _out(args, f"dataset_seed{settings.config.seed}"))
    if args.command == "sweep":
        methods = args.methods.split(",") if args.methods else [method]
        for m in methods:
            if m not in METHODS:
                raise ConfigError("methods", f"unknown method {m!r}")
        out = _out(args, f"sweep_{args.param}")
        harness.run_sweep(settings, args.param, [v for v in args.values.split(",") if v], methods, out, args.dataset)
        return out
    manifest = harness.make_manifest(settings, _out(args, f"{args.command}_{method}"), args.dataset)
    if args.command == "run":
        return harness.run_experiment(manifest)
    if args.command == "train":
        return harness.train_run(manifest)
    if args.command == "eval":
        return harness.eval_run(manifest, args.checkpoint)
    if args.command == "oracle":
        return harness.oracle_run(manifest)
    raise AssertionError(args.command)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = dispatch(args)
    except ConfigError as err:
        print(f"config error [{err.key}]: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001 - any runtime failure maps to one exit code
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
