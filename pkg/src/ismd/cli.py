"""ismd command line: one subcommand per pipeline stage plus ``run --all``.

Exit codes: 0 success, 1 usage or config error, 2 data or dependency
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__, pipeline
from .classify import NumericalError
from .config import ConfigError, config_from_dict, load_profile, parse_config, PROFILES
from .domainplan import PlanError
from .io import ArtifactError, atomic_write_text
from .sigsim import ConfigurationError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("ismd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which here means a data error
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_options(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="TOML config file (strict)")
    p.add_argument("--profile", choices=PROFILES, default=d, help="built-in config profile")
    p.add_argument("--seed", metavar="U64", type=int, default=d, help="root seed (env ISMD_SEED)")
    p.add_argument("--out", metavar="DIR", default=d, help="output directory (env ISMD_OUT)")
    p.add_argument("--jobs", metavar="N", type=int, default=d, help="worker processes within a stage")
    p.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ismd", description="Simulated motor-current fault diagnosis pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_options(p, suppress=False)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "simulate": "generate the three-phase cycle manifest",
        "preprocess": "refine originals, DQ0 transform, denoise, resample",
        "scalogram": "CWT images of the refined originals",
        "plan": "enumerate domain pairs and expected counts",
        "translate": "schedule and check every pair translation",
        "assemble": "synthesize generated images, write manifest and splits",
        "train": "train the CNN on generated images",
        "evaluate": "score the model on original (validation) cycles",
        "report": "write report.json",
    }
    for stage in pipeline.STAGES:
        sp = sub.add_parser(stage, help=helps[stage])
        _global_options(sp, suppress=True)
    sp = sub.add_parser("run", help="run stages in order")
    _global_options(sp, suppress=True)
    sp.add_argument("--all", action="store_true", help="run every stage")
    sp.add_argument("--from", dest="first", choices=pipeline.STAGES, help="first stage")
    sp.add_argument("--to", dest="last", choices=pipeline.STAGES, help="last stage")
    sp = sub.add_parser("show-config", help="print the resolved config as TOML")
    _global_options(sp, suppress=True)
    return p


def resolve_config(args, environ=None):
    environ = os.environ if environ is None else environ
    if args.config and args.profile:
        raise UsageError("--config and --profile are mutually exclusive")
    cfg = parse_config(args.config) if args.config else load_profile(args.profile or "default")
    seed = args.seed
    if seed is None and environ.get("ISMD_SEED"):
        try:
            seed = int(environ["ISMD_SEED"])
        except ValueError:
            raise UsageError(f"ISMD_SEED is not an integer: {environ['ISMD_SEED']!r}") from None
    if seed is not None:
        cfg = config_from_dict({**cfg.canonical(), "seed": seed})
    out = args.out or environ.get("ISMD_OUT") or cfg.paths.out
    return cfg, out


def _stages(args) -> list[str]:
    if args.command != "run":
        return [args.command]
    if args.all and (args.first or args.last):
        raise UsageError("--all cannot be combined with --from/--to")
    if not (args.all or args.first or args.last):
        raise UsageError("run needs --all or --from/--to")
    names = list(pipeline.STAGES)
    i = names.index(args.first) if args.first else 0
    j = names.index(args.last) if args.last else len(names) - 1
    if i > j:
        raise UsageError(f"--from {args.first} comes after --to {args.last}")
    return names[i:j + 1]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        cfg, out = resolve_config(args)
        if args.command == "show-config":
            sys.stdout.write(cfg.to_toml())
            return EXIT_OK
        jobs = args.jobs if args.jobs is not None else 1
        if jobs < 1:
            raise UsageError("--jobs must be >= 1")
        stages = _stages(args)
        os.makedirs(out, exist_ok=True)
        atomic_write_text(os.path.join(out, "config.toml"), cfg.to_toml())
        for stage in stages:
            result = pipeline.run_stage(stage, cfg, out, jobs)
            print(f"{stage}: {result}")
    except (UsageError, ConfigError, ConfigurationError) as exc:
        print(f"ismd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (pipeline.DependencyError, PlanError, ArtifactError, OSError) as exc:
        print(f"ismd: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"ismd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
