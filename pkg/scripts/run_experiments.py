#!/usr/bin/env python3
"""Run the bundled experiment configs one after another.

    python scripts/run_experiments.py                 # everything
    python scripts/run_experiments.py smoke fixed_env # selected configs
    python scripts/run_experiments.py --out results --threads 4

Each config writes into ``<out>/<config name>/``; a shared calibration
cache at ``<out>/calibration_cache.txt`` is built first so the runs only
read it.
"""
import argparse
import logging
import time
from pathlib import Path

from ccdo.g24 import VARIANT_IDS, CalibrationCache, make_schedule
from ccdo.harness import ExperimentSpec, report, run_experiment, run_fixed_env_ablation

CONFIG_DIR = Path(__file__).parent / "configs"
ABLATIONS = {"fixed_env"}

log = logging.getLogger("run_experiments")


def warm_cache(path: Path) -> None:
    cache = CalibrationCache(path)
    for v in VARIANT_IDS:
        for n in (10, 12):
            for alpha in make_schedule(v, n).env_sequence:
                cache.get(v, alpha)
    cache.save()


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("configs", nargs="*", help="config names (default: all in scripts/configs)")
    parser.add_argument("--out", default="results")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--reps", type=int, help="override repetitions of every config")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    names = args.configs or sorted(p.stem for p in CONFIG_DIR.glob("*.json"))
    out = Path(args.out)
    cache_path = out / "calibration_cache.txt"
    warm_cache(cache_path)

    for name in names:
        spec = ExperimentSpec.load(CONFIG_DIR / f"{name}.json")
        if args.reps:
            spec.repetitions = args.reps
        start = time.perf_counter()
        if name in ABLATIONS:
            result = run_fixed_env_ablation(spec, out / name, args.threads, cache_path)
            print(result.table_csv())
        else:
            run_experiment(spec, out / name, args.threads, cache_path)
            print(report(out / name))
        log.info("%s done in %.1f min", name, (time.perf_counter() - start) / 60)


if __name__ == "__main__":
    main()
