"""Command line entry point: ``ccdo run|ablate-fixed-env|calibrate|report``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .g24 import CALIBRATION_METADATA, VARIANT_IDS, CalibrationCache, make_schedule
from .harness import (
    ConfigError,
    ExperimentSpec,
    default_output_dir,
    report,
    run_experiment,
    run_fixed_env_ablation,
)


def _load_spec(args) -> ExperimentSpec:
    spec = ExperimentSpec.load(args.spec) if args.spec else ExperimentSpec()
    if args.seed is not None:
        spec.seed = args.seed
    if args.reps is not None:
        spec.repetitions = args.reps
    return spec.validate()


def _out(args) -> Path:
    return Path(args.out) if args.out else default_output_dir()


def cmd_run(args) -> int:
    spec = _load_spec(args)
    out = _out(args)
    result = run_experiment(spec, out, threads=args.threads)
    print(result.aggregate_csv(), end="")
    print(f"wrote {out}", file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    spec = _load_spec(args)
    out = _out(args)
    result = run_fixed_env_ablation(spec, out, threads=args.threads)
    print(result.table_csv(), end="")
    print(f"wrote {out}", file=sys.stderr)
    return 0


def cmd_calibrate(args) -> int:
    path = Path(args.cache) if args.cache else _out(args) / "calibration_cache.txt"
    cache = CalibrationCache(path)
    for v in args.variants or VARIANT_IDS:
        for alpha in make_schedule(v, args.num_changes).env_sequence:
            cal = cache.get(v, alpha)
            print(v, " ".join(f"{a:.6g}" for a in alpha), f"best={cal.best:.10g}", f"worst={cal.worst:.10g}")
    cache.save()
    print(f"wrote {path} ({len(cache)} records; {CALIBRATION_METADATA})", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    print(report(Path(args.results) if args.results else _out(args)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccdo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, spec=True):
        if spec:
            p.add_argument("spec", nargs="?", help="experiment spec (JSON); defaults apply when omitted")
            p.add_argument("--seed", type=int, help="override the spec's base seed")
            p.add_argument("--reps", type=int, help="override the number of repetitions")
            p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--out", help="output directory (default: $CCDO_OUTPUT_DIR or ./results)")

    p = sub.add_parser("run", help="run an experiment spec")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate-fixed-env", help="coevolutionary vs frozen-environment set search")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("calibrate", help="pre-compute best/worst feasible values of schedule environments")
    common(p, spec=False)
    p.add_argument("--variants", nargs="*", help="variant ids (default: all)")
    p.add_argument("--num-changes", type=int, default=12)
    p.add_argument("--cache", help="cache file (default: <out>/calibration_cache.txt)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="comparison tables from a results directory")
    p.add_argument("results", nargs="?", help="results directory containing runs.csv")
    common(p, spec=False)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
