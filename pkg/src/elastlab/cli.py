"""Command-line entry point: ``elastlab run <config>`` and ``elastlab verify``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numeric failure.
"""
import argparse
import os
import sys
from importlib import resources

from .config import ConfigError, load
from .errors import ElastlabError, NumericFailure, ParameterError, SingularityError

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "ELASTLAB_OUT"
DEFAULT_OUT = "elastlab-out"


def bundled_configs():
    """Names of the configs shipped with the package."""
    root = resources.files("elastlab") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_config(name):
    """A path as given, or the bundled config called ``name``."""
    if os.path.exists(name):
        return name
    stem = name[:-5] if name.endswith(".toml") else name
    if stem in bundled_configs():
        return str(resources.files("elastlab") / "configs" / f"{stem}.toml")
    raise ConfigError(name, f"no such file and no bundled config of that name (bundled: {', '.join(bundled_configs())})")


def parse_seeds(text):
    """``"0,1,5"`` or ranges like ``"0-19"`` (inclusive), possibly mixed."""
    seeds = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        lo, sep, hi = part.partition("-")
        try:
            seeds.extend(range(int(lo), int(hi) + 1) if sep else [int(part)])
        except ValueError:
            raise ConfigError("--seeds", f"cannot parse {part!r}") from None
    if not seeds:
        raise ConfigError("--seeds", "no seeds given")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("--seeds", "must not repeat")
    return seeds


def output_dir(args_out, cfg_out, stem):
    if args_out:
        return args_out
    if cfg_out:
        return cfg_out
    return os.path.join(os.environ.get(OUT_ENV) or DEFAULT_OUT, stem)


def _say(quiet, msg):
    if not quiet:
        print(msg)


def cmd_verify(out, perturb=None, slow=True, quiet=False, seed=0):
    from .verify import run_checks, write_report

    results = run_checks(seed=seed, perturb=perturb, slow=slow, on_result=lambda r: _say(quiet, r.line()))
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "verify_report.csv")
    write_report(results, path)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    _say(quiet, f"all {len(results)} checks passed; report in {path}")
    return EXIT_OK


def cmd_run(args):
    from .experiments import run_experiment

    path = resolve_config(args.config)
    cfg = load(path)
    if args.seeds:
        cfg.seeds = parse_seeds(args.seeds)
    stem = os.path.splitext(os.path.basename(path))[0]
    out = output_dir(args.out, cfg.out, stem)
    if cfg.kind == "verify":
        v = cfg["verify"]
        return cmd_verify(out, v["perturb"], v["slow"], args.quiet, cfg.seeds[0])
    manifest = run_experiment(cfg, out)
    _say(args.quiet, f"{cfg.kind}: wrote {len(manifest['files'])} files to {out} "
                     f"({manifest['elapsed_seconds']:.1f} s, backend {manifest['backend']})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="elastlab", description="Relative-similarity (S_rel) experiments.")
    parser.add_argument("--quiet", action="store_true", help="only print errors")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config (file path or bundled name)")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<config name> or ./{DEFAULT_OUT}/...)")
    run.add_argument("--seeds", help="override seeds, e.g. 0,1,2 or 0-19")
    run.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    ver = sub.add_parser("verify", help="run every invariant check and write a report")
    ver.add_argument("--out", help="report directory")
    ver.add_argument("--perturb", help="make checks fail: NAME or NAME=TOLERANCE, comma separated")
    ver.add_argument("--fast", action="store_true", help="skip the experiment-scale checks")
    ver.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    sub.add_parser("list", help="list bundled configs")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            print("\n".join(bundled_configs()))
            return EXIT_OK
        if args.command == "verify":
            out = args.out or os.path.join(os.environ.get(OUT_ENV) or DEFAULT_OUT, "verify")
            return cmd_verify(out, args.perturb, not args.fast, args.quiet)
        return cmd_run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, SingularityError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ElastlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
