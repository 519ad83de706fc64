"""End-to-end acceptance checks; each test prints one PASS/FAIL line.

The experiment-scale checks (4-8) take roughly 15 minutes on one core.
"""
import math
import time

import numpy as np
import pytest

from ccdo.coevolution import (
    CoevoConfig,
    EpFitness,
    ep_evolve_one_generation,
    ep_fitness,
    more_challenging,
    sp_evolve_one_generation,
    sp_fitness,
)
from ccdo.g24 import LIMITED_GROUP, VARIANT_IDS, Calibration, CalibrationCache, make_schedule, make_variant
from ccdo.harness import ExperimentSpec, run_experiment, run_fixed_env_ablation
from ccdo.local_search import FixedTarget, LocalSearchConfig, local_descent
from ccdo.metrics import ErrorTrace, e_mo, error_at
from ccdo.online import ROLES, OnlineConfig, OnlineOptimizer
from ccdo.problem import Evaluation, FeBudgetClock, compare_solutions

from conftest import report_line
from oracles import brute_ep_fitness, brute_sp_fitness

DF_VARIANTS = [v for v in VARIANT_IDS if make_variant(v).metadata["flags"].startswith("dF")]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def calibrations(workdir):
    return workdir / "calibration_cache.txt"


def mean_e_mo(result, variant, freq, algorithm):
    return float(result.values(variant, freq, algorithm).mean())


# --- 1 --------------------------------------------------------------------


def test_criterion_1_sp_fitness_oracle():
    rng = np.random.default_rng(101)
    problems = [make_variant("G24_1"), make_variant("G24_3")]
    instances = []
    for k in range(500):
        p = problems[k % 2]
        sp = p.random_solutions(rng, int(rng.integers(3, 7)))
        ep = p.random_envs(rng, int(rng.integers(3, 9)))
        instances.append((p, sp, ep))

    start = time.perf_counter()
    fast = [[sp_fitness(sp, i, ep, p) for i in range(len(sp))] for p, sp, ep in instances]
    elapsed = time.perf_counter() - start
    slow = [[brute_sp_fitness(sp, i, ep, p) for i in range(len(sp))] for p, sp, ep in instances]

    mismatches = sum(a != b for a, b in zip(fast, slow))
    ok = mismatches == 0 and elapsed < 10.0
    report_line(1, "sp_fitness equals brute force on 500 instances", ok,
                f"{mismatches} mismatches, {elapsed:.2f}s")
    assert mismatches == 0
    assert elapsed < 10.0


# --- 2 --------------------------------------------------------------------


def test_criterion_2_ep_fitness_oracle():
    rng = np.random.default_rng(202)
    problems = [make_variant(v) for v in ("G24_1", "G24_3", "G24_5", "G24_7")]
    mismatches, cases = 0, set()
    for k in range(500):
        p = problems[k % len(problems)]
        sp = p.random_solutions(rng, int(rng.integers(1, 11)))
        comparison = p.random_solutions(rng, 5)
        alpha = p.random_envs(rng, 1)[0]
        got = ep_fitness(alpha, sp, comparison, p)
        expected = brute_ep_fitness(alpha, sp, comparison, p)
        mismatches += (got.case, got.value) != expected
        cases.add(expected[0])
    ok = mismatches == 0
    report_line(2, "ep_fitness matches the four literal cases on 500 instances", ok,
                f"{mismatches} mismatches, cases seen {sorted(cases)}")
    assert mismatches == 0
    assert cases == {1, 2, 3, 4}


# --- 3 --------------------------------------------------------------------

# Environments of the toy runs: best/worst feasible values.
ENV_A = Calibration(best=-4.0, worst=0.0, best_x=None, has_feasible=True)
ENV_B = Calibration(best=-2.0, worst=6.0, best_x=None, has_feasible=True)
ENV_C = Calibration(best=1.5, worst=3.5, best_x=None, has_feasible=True)
ENV_NONE = Calibration(math.nan, math.nan, None, False)


def feas(f):
    return Evaluation.from_values(f, [-1.0, 0.0])


def infeas(f):
    return Evaluation.from_values(f, [0.5, -1.0])


# (per-FE best-so-far evaluations, environment of each FE, hand-computed E_MO)
TOY_RUNS = [
    # 1. single env, optimum found immediately: errors 0 0 0 0
    ([feas(-4.0)] * 4, [ENV_A] * 4, 0.0),
    # 2. nothing feasible yet, then optimum: 4 4 0 0
    ([None, infeas(-9.0), feas(-4.0), feas(-4.0)], [ENV_A] * 4, 2.0),
    # 3. slow improvement: 3 2 1 0
    ([feas(-1.0), feas(-2.0), feas(-3.0), feas(-4.0)], [ENV_A] * 4, 1.5),
    # 4. two environments: A errors 4 2, B errors 8 0
    ([None, feas(-2.0), None, feas(-2.0)], [ENV_A, ENV_A, ENV_B, ENV_B], 3.5),
    # 5. three environments, hand run: 1 0 | 8 4 | 2 0.5
    ([feas(-3.0), feas(-4.0), None, feas(2.0), None, feas(2.0)],
     [ENV_A, ENV_A, ENV_B, ENV_B, ENV_C, ENV_C], 15.5 / 6),
    # 6. environment without any feasible point contributes 0
    ([None, None, feas(-4.0), feas(-4.0)], [ENV_NONE, ENV_NONE, ENV_A, ENV_A], 0.0),
    # 7. infeasible best everywhere in one env: worst-best gap 2
    ([infeas(0.0)] * 2, [ENV_C] * 2, 2.0),
    # 8. a single FE
    ([feas(0.0)], [ENV_B], 2.0),
    # 9. mixed, eight FEs: 4 4 3 0.5 | 8 8 8 0 -> 35.5 / 8
    ([None, infeas(-5.0), feas(-1.0), feas(-3.5), None, None, infeas(1.0), feas(-2.0)],
     [ENV_A] * 4 + [ENV_B] * 4, 35.5 / 8),
    # 10. no-feasible env between two normal ones: 0.25 | 0 0 | 0
    ([feas(1.75), None, None, feas(1.5)], [ENV_C, ENV_NONE, ENV_NONE, ENV_C], 0.0625),
]


def test_criterion_3_metric_toy_traces():
    failures = []
    for k, (bests, envs, expected) in enumerate(TOY_RUNS, 1):
        trace = ErrorTrace([error_at(b, c) for b, c in zip(bests, envs)])
        if e_mo(trace) != expected:
            failures.append((k, e_mo(trace), expected))
    # the no-feasible-found branch directly: worst - best
    if error_at(None, ENV_B) != 8.0 or error_at(infeas(-100.0), ENV_A) != 4.0:
        failures.append(("branch", None, None))
    ok = not failures
    report_line(3, "e_mo/error_at reproduce 10 hand-computed toy traces", ok, f"failures: {failures}")
    assert not failures


# --- 4 and 8 ----------------------------------------------------------------

C4 = {"name": "criterion-4", "frequencies": [100], "repetitions": 10, "algorithms": ["CCDO", "CCDO-S"]}


@pytest.fixture(scope="module")
def c4_run(workdir, calibrations):
    start = time.perf_counter()
    result = run_experiment(ExperimentSpec.from_dict(C4), workdir / "c4", cache_path=calibrations)
    return result, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_4_archive_beats_random_start(c4_run):
    result, elapsed = c4_run
    worse = []
    parts = []
    for v in VARIANT_IDS:
        a, b = mean_e_mo(result, v, 100, "CCDO"), mean_e_mo(result, v, 100, "CCDO-S")
        parts.append(f"{v} {a:.3f}<{b:.3f}")
        if not a < b:
            worse.append(v)
    ok = not worse and elapsed < 1800
    report_line(4, "CCDO < CCDO-S mean E_MO on all 9 variants at 100 FEs", ok,
                f"{elapsed / 60:.1f} min; " + ", ".join(parts))
    assert not worse
    assert elapsed < 1800


@pytest.mark.slow
def test_criterion_8_determinism(c4_run, workdir, calibrations):
    run_experiment(ExperimentSpec.from_dict(C4), workdir / "c4-again", cache_path=calibrations)
    same = {name: (workdir / "c4" / name).read_bytes() == (workdir / "c4-again" / name).read_bytes()
            for name in ("aggregate.csv", "runs.csv", "wilcoxon.csv")}
    ok = all(same.values())
    report_line(8, "rerun of the criterion-4 experiment gives byte-identical CSVs", ok, str(same))
    assert ok


# --- 5 ----------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_fast_changes(workdir, calibrations):
    spec = ExperimentSpec.from_dict({"name": "criterion-5", "variants": DF_VARIANTS, "frequencies": [25],
                                     "repetitions": 10})
    result = run_experiment(spec, workdir / "c5", cache_path=calibrations)
    g24_1 = mean_e_mo(result, "G24_1", 25, "CCDO")
    # every run has the same number of periods, so the mean of per-run rates is the pooled share
    rate = float(np.mean([r.reconvergence for r in result.runs]))
    ok = g24_1 <= 0.6 and rate >= 0.7
    report_line(5, "25 FEs: G24_1 E_MO <= 0.6 and >= 70% periods re-converge on dF variants", ok,
                f"G24_1 {g24_1:.3f}, re-convergence {rate:.1%}")
    assert g24_1 <= 0.6
    assert rate >= 0.7


# --- 6 ----------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_slow_changes(workdir, calibrations):
    spec = ExperimentSpec.from_dict({"name": "criterion-6", "variants": ["G24_1", "G24_2"],
                                     "frequencies": [1000], "repetitions": 10})
    result = run_experiment(spec, workdir / "c6", cache_path=calibrations)
    g1, g2 = mean_e_mo(result, "G24_1", 1000, "CCDO"), mean_e_mo(result, "G24_2", 1000, "CCDO")
    ok = g1 <= 0.05 and g2 <= 0.06
    report_line(6, "1000 FEs: G24_1 E_MO <= 0.05 and G24_2 <= 0.06", ok, f"G24_1 {g1:.4f}, G24_2 {g2:.4f}")
    assert g1 <= 0.05
    assert g2 <= 0.06


# --- 7 ----------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_fixed_environment_ablation(workdir, calibrations):
    many = ["G24_3", "G24_7"]
    spec = ExperimentSpec.from_dict({"name": "criterion-7", "variants": many + list(LIMITED_GROUP),
                                     "repetitions": 10})
    result = run_fixed_env_ablation(spec, workdir / "c7", cache_path=calibrations)
    parts, ok = [], True
    for v in spec.variants:
        fixed, coevo = result.scores(v)
        parts.append(f"{v} coevo {coevo.mean():.3f} / fixed {fixed.mean():.3f}")
        if v in many:
            ok &= bool(coevo.mean() <= fixed.mean())
        else:
            ok &= bool(np.isfinite(fixed).all() and np.isfinite(coevo).all())
    report_line(7, "coevolved EP set quality <= frozen EP on G24_3/G24_7; finite on limited group", ok,
                "; ".join(parts))
    assert ok


# --- 9 ----------------------------------------------------------------------


def test_criterion_9_condensed_properties(calibrations):
    """A fast cross-module sweep; the full property suites live in the module tests."""
    cache = CalibrationCache(calibrations)
    rng = np.random.default_rng(909)
    problems = {v: make_variant(v) for v in VARIANT_IDS}
    failures = []

    # ordering consistency of compare_solutions and of the challenge order
    evals = [Evaluation.from_values(rng.normal(), rng.normal(size=2) * (rng.random() < 0.5)) for _ in range(40)]
    for a in evals:
        for b in evals:
            if compare_solutions(a, b) != -compare_solutions(b, a):
                failures.append("compare antisymmetry")
    rank = {1: 3, 2: 2, 3: 1, 4: 1}
    for ca in range(1, 5):
        for cb in range(1, 5):
            if rank[ca] != rank[cb] and more_challenging(EpFitness(ca, 0.0), EpFitness(cb, 0.0), rng) != (
                    rank[ca] > rank[cb]):
                failures.append(f"case order {ca}/{cb}")

    # population-size conservation and bounds under coevolution
    cfg = CoevoConfig()
    for v in ("G24_1", "G24_4", "G24_5"):
        p = problems[v]
        sp, ep = p.random_solutions(rng, 10), p.random_envs(rng, 10)
        for _ in range(3):
            sp = sp_evolve_one_generation(sp, ep, p, cfg, rng)
            ep = ep_evolve_one_generation(ep, sp, p, cfg, rng)
            if sp.shape != (10, 2) or len(ep) != 10:
                failures.append(f"{v} population size")
            if not (((sp >= p.x_lower) & (sp <= p.x_upper)).all() and
                    ((ep >= p.env_lower) & (ep <= p.env_upper)).all()):
                failures.append(f"{v} bounds")

    # local search: budget and never-worse
    for v in ("G24_2", "G24_6a"):
        p = problems[v]
        x0, alpha = p.random_solutions(rng, 1)[0], p.random_envs(rng, 1)[0]
        clock = FeBudgetClock.unbounded()
        _, e = local_descent(x0, FixedTarget(p, alpha, clock), LocalSearchConfig(max_fes=20))
        if clock.total_fes > 20 or compare_solutions(e, p.evaluate(x0, alpha)) > 0:
            failures.append(f"{v} local search contract")

    # online: FE conservation, per-period monotone error, bounds of the archive
    for v in ("G24_1", "G24_3b", "G24_7"):
        p = problems[v]
        arch = p.random_solutions(rng, 10)
        opt = OnlineOptimizer(p, make_schedule(v, 4), 50, arch, OnlineConfig(seed=9), cache)
        rec = opt.run()
        if sum(rec.role_fes[r] for r in ROLES) != rec.total_fes or rec.total_fes != 200:
            failures.append(f"{v} FE conservation")
        if any((np.diff(period) > 0).any() for period in rec.periods()):
            failures.append(f"{v} monotone error")
        if not ((rec.archive >= p.x_lower) & (rec.archive <= p.x_upper)).all():
            failures.append(f"{v} archive bounds")

    ok = not failures
    report_line(9, "condensed invariant sweep (sizes, FEs, bounds, ordering, monotone)", ok, str(failures))
    assert not failures
