#!/usr/bin/env python3
"""Offline set search for one variant; writes the set and its metadata.

    python scripts/offline_set.py G24_1 --seed 3 --out sets/G24_1.txt

Also reports the set quality over random environments, and, with
``--frozen``, the same search against a fixed random environment set.
"""
import argparse
from pathlib import Path

import numpy as np

from ccdo.coevolution import CoevoConfig, run_offline_search
from ccdo.g24 import CalibrationCache, make_variant
from ccdo.metrics import set_quality


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("variant")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--g-max", type=int, default=50)
    parser.add_argument("--frozen", action="store_true", help="do not evolve the environment population")
    parser.add_argument("--samples", type=int, default=50, help="environments for the set-quality score")
    parser.add_argument("--out", type=Path)
    parser.add_argument("--cache", type=Path, help="calibration cache file")
    args = parser.parse_args()

    problem = make_variant(args.variant)
    config = CoevoConfig(g_max=args.g_max, seed=args.seed, evolve_environments=not args.frozen)
    result = run_offline_search(problem, config)
    print(f"{problem.name}: {len(result.solutions)} solutions, {result.fes} offline FEs "
          f"(predicted {config.offline_fes()})")
    for x in result.solutions:
        print("  " + " ".join(f"{v:.6f}" for v in x))

    sample = problem.random_envs(np.random.default_rng(args.seed + 1), args.samples)
    score = set_quality(result.solutions, sample, problem, CalibrationCache(args.cache))
    print(f"set quality over {args.samples} random environments: {score:.4f}")
    if args.out:
        result.write(args.out)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
